#!/usr/bin/env python3
"""Download a TUDataset benchmark (PROTEINS, ENZYMES, DD, COLLAB, ...) into data/.

Usage: python scripts/fetch_tudataset.py PROTEINS [more names...]

Repo tooling only; the library itself never touches the network.
"""
from __future__ import annotations

import io
import sys
import urllib.request
import zipfile
from pathlib import Path

MIRRORS = [
    "https://www.chrsmrrs.com/graphkerneldatasets/{name}.zip",
    "https://ls11-www.cs.tu-dortmund.de/people/morris/graphkerneldatasets/{name}.zip",
]


def fetch(name: str, target: Path) -> None:
    last_error = None
    for mirror in MIRRORS:
        url = mirror.format(name=name)
        try:
            print(f"fetching {url}")
            with urllib.request.urlopen(url, timeout=60) as response:
                payload = response.read()
            break
        except OSError as exc:
            last_error = exc
            print(f"  failed: {exc}")
    else:
        raise SystemExit(f"could not download {name}: {last_error}")
    with zipfile.ZipFile(io.BytesIO(payload)) as archive:
        archive.extractall(target)
    print(f"extracted to {target / name}")


def main() -> None:
    names = sys.argv[1:] or ["PROTEINS"]
    target = Path("data")
    target.mkdir(exist_ok=True)
    for name in names:
        fetch(name, target)


if __name__ == "__main__":
    main()
