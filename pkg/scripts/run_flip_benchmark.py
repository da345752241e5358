"""Run the half-flipped-source benchmark and print the method comparison.

Same as `metaweight experiment --config configs/flip_benchmark.json`, kept
as a script so the grid is easy to edit in place. Expect about a minute per
seed at the full source size, most of it in the reweighted method.
"""

import sys
from pathlib import Path

from metaweight.experiment import emit_results, load_config, run_experiment

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "flip_benchmark.json"


def main() -> int:
    cfg = load_config(sys.argv[1] if len(sys.argv) > 1 else CONFIG)
    table = run_experiment(cfg)
    paths = emit_results(table, cfg.output_dir)
    for row in table.aggregates:
        print(f"{row.method:15s} {row.shot}-shot  mean accuracy {row.mean_accuracy:.4f}")
    for err in table.errors:
        print(f"cell (shot={err.shot}, seed={err.seed}) failed: {err.message}", file=sys.stderr)
    print(f"full tables: {paths['csv']}, {paths['json']}, {paths['summary']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
