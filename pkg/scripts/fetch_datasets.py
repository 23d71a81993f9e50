#!/usr/bin/env python3
"""Download the signed bitcoin trust-network edge lists into data/.

Needs outbound network access; the acceptance tests that use these files
skip when they are absent.
"""

import sys
import urllib.request
from pathlib import Path

BASE = "https://snap.stanford.edu/data"
FILES = ["soc-sign-bitcoinotc.csv.gz", "soc-sign-bitcoinalpha.csv.gz"]


def main() -> int:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data")
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        dest = out_dir / name
        if dest.exists():
            print(f"{dest} already present")
            continue
        url = f"{BASE}/{name}"
        print(f"fetching {url}")
        try:
            urllib.request.urlretrieve(url, dest)
        except OSError as exc:
            print(f"failed: {exc}", file=sys.stderr)
            return 1
        print(f"wrote {dest} ({dest.stat().st_size} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
