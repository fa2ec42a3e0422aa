"""Print the summary block and stage timings of every manifest under a run directory."""
import argparse
import json
from pathlib import Path


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("root", nargs="?", default="runs")
    args = p.parse_args()
    manifests = sorted(Path(args.root).glob("**/manifest.json"))
    if not manifests:
        raise SystemExit(f"no manifest.json under {args.root}")
    for path in manifests:
        m = json.loads(path.read_text())
        print(f"{path.parent.name}  ({m['config']['experiment']}, seed {m['config']['seed']}, "
              f"{m['total_seconds']:.1f}s)")
        for key, value in m["summary"].items():
            print(f"    {key}: {value}")
        for stage, secs in m["stage_seconds"].items():
            print(f"    [{stage}] {secs:.2f}s")


if __name__ == "__main__":
    main()
