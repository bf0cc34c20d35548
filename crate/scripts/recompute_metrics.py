#!/usr/bin/env python3
"""Recompute accuracy, mean sequence length and mean prompt tokens from an
eval_trajectories.jsonl file and optionally check them against the matching
eval_report.json."""

import argparse
import json
import sys


def recompute(path):
    rows = [json.loads(line) for line in open(path, encoding="utf-8") if line.strip()]
    if not rows:
        sys.exit(f"{path}: no trajectories")
    n = len(rows)
    return {
        "tasks": n,
        "accuracy": sum(1 for r in rows if r["correct"]) / n,
        "mean_sequence_length": sum(r["sequence_length"] for r in rows) / n,
        "mean_prompt_tokens": sum(r["total_prompt_tokens"] for r in rows) / n,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("trajectories")
    parser.add_argument("--report", help="eval_report.json to compare against")
    parser.add_argument("--tolerance", type=float, default=1e-9)
    args = parser.parse_args()

    metrics = recompute(args.trajectories)
    print(json.dumps(metrics, indent=2))
    if args.report:
        report = json.load(open(args.report, encoding="utf-8"))
        bad = [k for k, v in metrics.items() if abs(report[k] - v) > args.tolerance]
        if bad:
            sys.exit(f"report disagrees on {', '.join(bad)}")
        print("report matches")


if __name__ == "__main__":
    main()
