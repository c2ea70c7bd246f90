"""Command-line front door: headless ingest, wrangling, pivoting, and the
socket server.

Exit codes: 0 success, 1 usage, 2 ingest/parse, 3 transform or pivot
validation, 4 I/O. Diagnostics go to stderr; data goes to stdout or the
-o file. TABLEHUB_LOG=error|info|debug controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import (
    ExprError,
    IngestError,
    MalformedProjectError,
    TableHubError,
    TransformError,
)
from .exchange import DataFormat, export_table, serialize_payload
from .ingest import (
    Dialect,
    detect_header,
    finalize,
    parse_delimited,
    parse_structured,
    sniff_dialect,
)
from .pivot import PivotSpec, pivot, pivot_to_table
from .table import Table
from .transform import apply_pipeline, parse_pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INGEST = 2
EXIT_TRANSFORM = 3
EXIT_IO = 4

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; we own the exit-code map.
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tablehub",
                     description="Columnar data hub: ingest, wrangle, "
                                 "pivot, serve.")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    def add_input_flags(p):
        p.add_argument("file", help="input data file")
        p.add_argument("--format", choices=["csv", "tsv", "json"],
                       help="input format (default: by extension)")
        p.add_argument("--delimiter", metavar="C",
                       help="field delimiter, overrides sniffing")
        p.add_argument("--no-header", action="store_true",
                       help="first row is data, not column names")

    p_info = sub.add_parser("info", help="describe a data file")
    add_input_flags(p_info)

    p_convert = sub.add_parser("convert", help="ingest and re-export")
    add_input_flags(p_convert)
    p_convert.add_argument("--to", required=True, metavar="FMT",
                           choices=[f.value for f in DataFormat],
                           help="output format")
    p_convert.add_argument("-o", "--output", metavar="FILE")

    p_wrangle = sub.add_parser("wrangle",
                               help="apply a transform script, then export")
    add_input_flags(p_wrangle)
    p_wrangle.add_argument("--script", required=True, metavar="FILE",
                           help="transform script (.dwj)")
    p_wrangle.add_argument("--to", required=True, metavar="FMT",
                           choices=[f.value for f in DataFormat])
    p_wrangle.add_argument("-o", "--output", metavar="FILE")

    p_pivot = sub.add_parser("pivot", help="pivot and export as csv")
    add_input_flags(p_pivot)
    p_pivot.add_argument("--rows", default="", metavar="A,B",
                         help="row dimension columns")
    p_pivot.add_argument("--cols", default="", metavar="C",
                         help="column dimension columns")
    p_pivot.add_argument("--agg", required=True, metavar="FN[:COL]",
                         help="count, or sum:col, mean:col, min:col, max:col")
    p_pivot.add_argument("--totals", action="store_true",
                         help="add marginal totals")
    p_pivot.add_argument("-o", "--output", metavar="FILE")

    p_serve = sub.add_parser("serve", help="run the hub socket server")
    p_serve.add_argument("--port", type=int, required=True)
    p_serve.add_argument("--project", metavar="FILE",
                         help="preload a .dsproj project")
    return parser


def run(argv) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise UsageError("a subcommand is required")
        if args.subcommand != "serve":
            _validate_input_flags(args)
        return _DISPATCH[args.subcommand](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IngestError as e:
        print(f"ingest error: {e}", file=sys.stderr)
        return EXIT_INGEST
    except (TransformError, ExprError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_TRANSFORM
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except TableHubError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_TRANSFORM
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)


def entry() -> None:
    sys.exit(run(sys.argv[1:]))


def _configure_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("TABLEHUB_LOG", "error"),
                            logging.ERROR)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _validate_input_flags(args) -> None:
    fmt = _input_format(args)
    if args.delimiter is not None:
        if len(args.delimiter) != 1:
            raise UsageError("--delimiter must be a single character")
        if fmt == "json":
            raise UsageError("--delimiter does not apply to json input")
    if args.no_header and fmt == "json":
        raise UsageError("--no-header does not apply to json input")


def _input_format(args) -> str:
    if args.format:
        return args.format
    ext = os.path.splitext(args.file)[1].lower()
    mapping = {".csv": "csv", ".tsv": "tsv", ".json": "json"}
    if ext not in mapping:
        raise UsageError(
            f"cannot tell the format of {args.file!r}; pass --format")
    return mapping[ext]


def _read_file(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def _load_table(args) -> Table:
    fmt = _input_format(args)
    text = _read_file(args.file)
    if fmt == "json":
        return parse_structured(text)
    if args.delimiter is not None:
        delimiter = args.delimiter
    elif fmt == "tsv":
        delimiter = "\t"
    else:
        delimiter = sniff_dialect(text).delimiter
    has_header = False if args.no_header else detect_header(text, delimiter)
    raw = parse_delimited(text, Dialect(delimiter, has_header=has_header))
    return finalize(raw)


def _emit(args, text: str) -> int:
    if getattr(args, "output", None):
        with open(args.output, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _export_text(t: Table, fmt_name: str) -> str:
    fmt = DataFormat.parse(fmt_name)
    payload = export_table(t, fmt)
    text = serialize_payload(payload)
    if fmt is not DataFormat.CSV:
        text += "\n"
    return text


def _cmd_info(args) -> int:
    t = _load_table(args)
    print(f"{args.file}: {t.n_rows} rows, {len(t.columns)} columns")
    for c in t.columns:
        print(f"  {c.name}  {c.dtype.value}  nulls={c.null_count()}")
    return EXIT_OK


def _cmd_convert(args) -> int:
    t = _load_table(args)
    return _emit(args, _export_text(t, args.to))


def _cmd_wrangle(args) -> int:
    t = _load_table(args)
    pipeline = parse_pipeline(_read_file(args.script))
    t = apply_pipeline(t, pipeline)
    return _emit(args, _export_text(t, args.to))


def _parse_agg(spec: str):
    if ":" in spec:
        fn, _, measure = spec.partition(":")
        if not measure:
            raise UsageError("--agg needs a column after ':'")
    else:
        fn, measure = spec, None
    if fn == "count":
        if measure is not None:
            raise UsageError("count takes no column")
    elif fn in ("sum", "mean", "min", "max"):
        if measure is None:
            raise UsageError(f"--agg {fn} needs a column: {fn}:col")
    else:
        raise UsageError(f"unknown aggregate {fn!r}")
    return fn, measure


def _split_names(arg: str) -> tuple:
    return tuple(n for n in arg.split(",") if n) if arg else ()


def _cmd_pivot(args) -> int:
    fn, measure = _parse_agg(args.agg)
    t = _load_table(args)
    spec = PivotSpec(row_dims=_split_names(args.rows),
                     col_dims=_split_names(args.cols),
                     measure=measure, agg=fn, totals=args.totals)
    flat = pivot_to_table(pivot(t, spec))
    return _emit(args, export_table(flat, DataFormat.CSV))


def _cmd_serve(args) -> int:
    from . import session as session_mod
    from .server import serve_forever
    session = None
    if args.project:
        try:
            session = session_mod.load_project(_read_file(args.project))
        except MalformedProjectError as e:
            print(f"ingest error: {e}", file=sys.stderr)
            return EXIT_INGEST
    try:
        serve_forever(args.port, session)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


_DISPATCH = {
    "info": _cmd_info,
    "convert": _cmd_convert,
    "wrangle": _cmd_wrangle,
    "pivot": _cmd_pivot,
    "serve": _cmd_serve,
}


if __name__ == "__main__":
    entry()
