"""Minimal line-protocol sampler used as a subprocess fixture in tests.

Modes:
  constant   -- every entry equals --value
  gaussian   -- iid normal around the last history row, seeded per request
  bad-shape  -- declares the requested shape but sends one extra sample
  error      -- answers every sample request with an error object
  hang       -- never answers sample requests (timeout testing)
"""

import argparse
import json
import sys
import time

import numpy as np


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--mode", default="constant")
    parser.add_argument("--value", type=float, default=5.0)
    parser.add_argument("--d", type=int, default=1)
    args = parser.parse_args()

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            print(json.dumps({"error": "bad json"}), flush=True)
            continue
        if req.get("op") == "hello":
            print(
                json.dumps({"name": f"stub-{args.mode}", "d": args.d, "min_context": 1}),
                flush=True,
            )
            continue
        if req.get("op") != "sample":
            print(json.dumps({"error": f"unknown op {req.get('op')}"}), flush=True)
            continue
        m, h = int(req["m"]), int(req["h"])
        if args.mode == "error":
            print(json.dumps({"error": "stub refuses to sample"}), flush=True)
            continue
        if args.mode == "hang":
            time.sleep(3600)
        if args.mode == "constant":
            samples = np.full((m, h, args.d), args.value)
        elif args.mode == "gaussian":
            rng = np.random.default_rng(int(req["seed"]))
            last = np.asarray(req["history"], dtype=float)[-1]
            samples = last + rng.standard_normal((m, h, args.d))
        elif args.mode == "bad-shape":
            samples = np.zeros((m + 1, h, args.d))
        else:
            print(json.dumps({"error": f"unknown mode {args.mode}"}), flush=True)
            continue
        print(
            json.dumps({"samples": samples.tolist(), "shape": [m, h, args.d]}),
            flush=True,
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
