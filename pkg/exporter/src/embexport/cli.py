import argparse
import logging
import sys

from . import __version__
from .encoders import EncoderLoadError
from .export import ManifestError, export, load_manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embexport",
        description="Run text encoders over processed trial records and "
                    "write a CTOPEMB1 embedding cache")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run an export manifest")
    p.add_argument("--manifest", required=True)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        manifest = load_manifest(args.manifest)
        count = export(manifest)
    except (ManifestError, EncoderLoadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {count} vectors (dim {manifest.dim}) "
          f"to {manifest.cache_path}")
    return 0
