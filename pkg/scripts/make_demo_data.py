#!/usr/bin/env python3
"""Generate a self-consistent demo dataset and a replay config for it.

Writes transactions.csv, offers.jsonl and impressions.jsonl into --out,
plus replay.json next to them so the CLI can be pointed straight at the
freshly generated files:

    python3 scripts/make_demo_data.py --out data/demo
    offerbandit replay --config data/demo/replay.json
"""

import argparse
import json
from pathlib import Path

from offerbandit.datagen import generate_dataset


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/demo", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--members", type=int, default=20)
    parser.add_argument("--categories", type=int, default=6)
    parser.add_argument("--brands", type=int, default=8)
    parser.add_argument("--offers", type=int, default=30)
    parser.add_argument("--impressions", type=int, default=400)
    args = parser.parse_args()

    paths = generate_dataset(
        args.out,
        seed=args.seed,
        n_members=args.members,
        n_categories=args.categories,
        n_brands=args.brands,
        n_offers=args.offers,
        n_impressions=args.impressions,
    )
    for name, path in paths.items():
        print(f"wrote {name}: {path}")

    config = {
        "policy": "camb",
        "data": {k: str(v) for k, v in paths.items()},
        "run": {"seed": args.seed, "out_dir": str(Path(args.out) / "runs" / "replay")},
    }
    config_path = Path(args.out) / "replay.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"wrote config: {config_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
