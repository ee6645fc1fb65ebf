"""Run every shipped preset through the CLI, one output directory per preset."""
import argparse
import sys
from pathlib import Path

from levnmr import cli
from levnmr.config import preset_names, read_preset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("figures"))
    ap.add_argument("--seed", default="0")
    ap.add_argument("--jobs", default="1")
    ap.add_argument("--only", nargs="*", help="subset of preset names")
    args = ap.parse_args()
    names = args.only or preset_names()
    failed = []
    for name in names:
        cmd = next(s for s in read_preset(name).sections() if s in cli.COMMANDS)
        code = cli.main([cmd, "--preset", name, "--out", str(args.out / name), "--seed", args.seed,
                         "--jobs", args.jobs])
        print(f"{name:28s} {cmd:8s} exit {code}")
        if code:
            failed.append(name)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
