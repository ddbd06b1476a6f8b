"""Summarize station readings found in the current directory."""

import json
import sys
from pathlib import Path

MAX_ROWS = 1000


def summarize(path):
    rows = [line.split(",") for line in path.read_text().splitlines() if line.strip()]
    if not rows or any(len(r) != 3 for r in rows):
        raise ValueError(f"{path.name}: malformed rows")
    limited = len(rows) > MAX_ROWS
    values = [int(r[2]) for r in rows[:MAX_ROWS]]
    return {"file": path.name, "count": len(values), "mean": sum(values) / len(values), "limited": limited}


def main(argv):
    unit = argv[argv.index("--unit") + 1] if "--unit" in argv else "celsius"
    done = 0
    for path in sorted(Path(".").glob("*.txt")):
        if path.stem.endswith("_out"):
            continue
        try:
            summary = summarize(path)
        except ValueError as exc:
            print(f"error: invalid input {exc}", file=sys.stderr)
            continue
        summary["unit"] = unit
        print(json.dumps(summary))
        if summary["limited"]:
            print(f"row limit of {MAX_ROWS} reached")
        Path(f"{path.stem}_out.txt").write_text(f"mean={summary['mean']:.2f}\n")
        done += 1
    print(f"summarized {done} file(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
