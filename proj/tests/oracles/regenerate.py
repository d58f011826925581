#!/usr/bin/env python3
# Copyright 2026 The datareg Authors
# SPDX-License-Identifier: Apache-2.0
"""Rewrite derived fixtures from their oracles and report the diff.

Reads tests/fixtures/manifest.json. Records with provenance "derived" must
name an oracle command; "{seed}" in it is replaced by the manifest seed (or
--seed). Hand-written records are left alone.

  regenerate.py            rewrite changed fixtures, print a unified diff
  regenerate.py --check    print the diff only; exit 1 if anything differs
"""

import argparse
import difflib
import json
import pathlib
import shlex
import subprocess
import sys

ROOT = pathlib.Path(__file__).resolve().parents[2]


class RegenerationError(RuntimeError):
    pass


def render(record, payload):
    doc = {
        "id": record["id"],
        "provenance": record["provenance"],
        "tolerance": record["tolerance"],
        "inputs": payload["inputs"],
        "expected": payload["expected"],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def run_oracle(record, seed, root):
    oracle = record.get("oracle")
    if not oracle:
        raise RegenerationError(f"fixture '{record['id']}': derived fixture names no oracle")
    cmd = [part.replace("{seed}", str(seed)) for part in shlex.split(oracle)]
    proc = subprocess.run(cmd, cwd=root, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RegenerationError(
            f"fixture '{record['id']}': oracle failed ({' '.join(cmd)}): {proc.stderr.strip()}")
    try:
        return json.loads(proc.stdout)
    except json.JSONDecodeError as e:
        raise RegenerationError(f"fixture '{record['id']}': oracle output is not JSON: {e}") from e


def regenerate(fixture_dir, seed=None, check=False, root=ROOT, out=sys.stdout):
    """Returns the list of fixture ids whose file changed (or would change)."""
    fixture_dir = pathlib.Path(fixture_dir)
    manifest = json.loads((fixture_dir / "manifest.json").read_text())
    seed = manifest["seed"] if seed is None else seed
    changed = []
    for record in manifest["fixtures"]:
        if record["provenance"] != "derived":
            continue
        path = fixture_dir / record["file"]
        new = render(record, run_oracle(record, seed, root))
        old = path.read_text() if path.exists() else ""
        if new == old:
            continue
        changed.append(record["id"])
        out.writelines(difflib.unified_diff(old.splitlines(True), new.splitlines(True),
                                            f"a/{record['file']}", f"b/{record['file']}", n=1))
        if not check:
            path.write_text(new)
    return changed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fixtures", default=str(ROOT / "tests" / "fixtures"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()
    try:
        changed = regenerate(args.fixtures, args.seed, args.check)
    except RegenerationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"{len(changed)} fixture(s) {'differ' if args.check else 'rewritten'}"
          + (": " + ", ".join(changed) if changed else ""), file=sys.stderr)
    return 1 if (args.check and changed) else 0


if __name__ == "__main__":
    sys.exit(main())
