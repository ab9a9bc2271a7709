import argparse
import json
import sys

from .errors import ExportError, ModelLoadFailure
from .exporter import ExportJob, export_embeddings
from .models import DEFAULT_MODEL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed-export")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="embed a key<TAB>text file into an EMBV1 store")
    p.add_argument("--input", required=True, help="TSV with one key<TAB>text per line")
    p.add_argument("--out", required=True, help="output EMBV1 path")
    p.add_argument("--model", default=DEFAULT_MODEL,
                   help=f"model id or fallback:<dim> (default {DEFAULT_MODEL})")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--no-normalize", action="store_true", help="keep raw model norms")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        input_path=args.input,
        output_path=args.out,
        model_id=args.model,
        batch_size=args.batch,
        normalize=not args.no_normalize,
    )
    try:
        summary = export_embeddings(job)
    except ModelLoadFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"count": summary.count, "dim": summary.dim, "model": summary.model_id}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
