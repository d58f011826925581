# Copyright 2026 The datareg Authors
# SPDX-License-Identifier: Apache-2.0
import io
import json
import pathlib
import shutil

import pytest

import regenerate

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "fixtures"


@pytest.fixture
def workdir(tmp_path):
    dst = tmp_path / "fixtures"
    shutil.copytree(FIXTURES, dst)
    return dst


def test_unchanged_oracles_give_empty_diff(workdir):
    out = io.StringIO()
    assert regenerate.regenerate(workdir, check=True, out=out) == []
    assert out.getvalue() == ""


def test_seed_change_rewrites_and_keeps_provenance(workdir):
    before = {p.name: p.read_text() for p in workdir.iterdir()}
    changed = regenerate.regenerate(workdir, seed=8, out=io.StringIO())
    assert {"scores_dense", "projection_kron", "bruteforce_subset", "rng_stream"} <= set(changed)
    manifest = json.loads((workdir / "manifest.json").read_text())
    for record in manifest["fixtures"]:
        doc = json.loads((workdir / record["file"]).read_text())
        assert doc["provenance"] == record["provenance"]
    assert (workdir / "topk_ties.json").read_text() == before["topk_ties.json"]


def test_missing_oracle_names_the_fixture(workdir):
    path = workdir / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["fixtures"][1]["oracle"] = "python3 tests/oracles/oracles.py no_such_oracle --seed {seed}"
    path.write_text(json.dumps(manifest))
    with pytest.raises(regenerate.RegenerationError, match="fixture 'scores_dense'"):
        regenerate.regenerate(workdir, check=True, out=io.StringIO())


def test_derived_record_without_oracle_is_an_error(workdir):
    path = workdir / "manifest.json"
    manifest = json.loads(path.read_text())
    del manifest["fixtures"][0]["oracle"]
    path.write_text(json.dumps(manifest))
    with pytest.raises(regenerate.RegenerationError, match="fixture 'rng_stream'"):
        regenerate.regenerate(workdir, check=True, out=io.StringIO())
