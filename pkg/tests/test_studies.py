import csv
import io
import json

import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given

from fpbc.protocol import (
    CompressionConfig,
    EncoderStudyConfig,
    MasklessConfig,
    StudyTable,
    compression_sweep,
    encoder_study,
    maskless_control,
)
from fpbc.protocol.studies import FAST_SOLVER_GRID, cell_seeds, design_chain, run_cells


def _square(x):
    return x * x


@pytest.fixture(scope="module")
def sweep():
    cfg = CompressionConfig(size=(16, 16), levels=(1, 2, 4), max_iters=60)
    return cfg, compression_sweep(cfg, seed=0)


# ---- tables

def test_table_csv_layout():
    t = StudyTable("demo", ["a", "b", "c"], [{"a": "x", "b": 1.23456, "c": True},
                                             {"a": "y", "b": 2e-5, "c": None}])
    rows = list(csv.reader(io.StringIO(t.to_csv())))
    assert rows == [["a", "b", "c"], ["x", "1.2346", "True"], ["y", "2e-05", "None"]]


def test_table_json_round_trip():
    t = StudyTable("demo", ["a"], [{"a": 1.5}], ["careful"], {"seed": 3})
    doc = json.loads(json.dumps(t.to_json()))
    assert doc == {"study": "demo", "columns": ["a"], "rows": [{"a": 1.5}], "warnings": ["careful"],
                   "meta": {"seed": 3}}


def test_text_lists_warnings():
    t = StudyTable("demo", ["a"], [{"a": 1}], ["w1"])
    assert t.to_text().splitlines()[-1] == "warning: w1"


# ---- seeding and cell execution

@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 20))
def test_cell_seeds_prefix_stable(master, n):
    seeds = cell_seeds(master, n)
    assert len(set(seeds)) == n
    assert cell_seeds(master, n + 3)[:n] == seeds


def test_run_cells_order_and_pool_agree():
    cells = list(range(7))
    assert run_cells(_square, cells) == [c * c for c in cells]
    assert run_cells(_square, cells, workers=2) == run_cells(_square, cells, workers=1)


def test_design_chain_layout():
    chain = design_chain("multilens", mask=True, dispersions=("W_lambda",), mask_seed=5)
    kinds = [p.split("(")[1].split(",")[0].rstrip(")") for p in chain.split(" -> ")]
    assert kinds == ["Phi_z", "M", "W_lambda", "Sigma", "D"]


# ---- compression sweep

def test_sweep_masked_dominates(sweep):
    _, t = sweep
    assert t.column("level") == ["1:1", "2:1", "4:1"]
    assert all(t.column("masked_ge_maskless"))
    assert not any(t.column("collapse"))


def test_sweep_one_to_one_is_best(sweep):
    _, t = sweep
    best = [max(r["maskless_psnr_db"], r["masked_psnr_db"]) for r in t.rows]
    assert best[0] == max(best)


def test_sweep_byte_identical(sweep):
    cfg, t = sweep
    again = compression_sweep(cfg, seed=0)
    assert again.to_csv() == t.to_csv()
    assert json.dumps(again.to_json(), sort_keys=True) == json.dumps(t.to_json(), sort_keys=True)


def test_sweep_seed_matters(sweep):
    cfg, t = sweep
    assert compression_sweep(cfg, seed=1).to_csv() != t.to_csv()


# ---- encoder and maskless studies on reduced configs

def test_encoder_study_layout():
    cfg = EncoderStudyConfig(size=(16, 16), n_depths=4, combos=("3d_only", "mask"), max_iters=30,
                             solver_grid=FAST_SOLVER_GRID[:1])
    t = encoder_study(cfg, seed=0)
    assert t.columns == ["encoder", "3d_only (4:1)", "mask (4:1)", "psf_cross_correlation"]
    assert [r["encoder"] for r in t.rows] == ["diffuser", "multilens", "metasurface"]
    assert all(np.isfinite(r["mask (4:1)"]) for r in t.rows)


def test_maskless_control_small():
    cfg = MasklessConfig(dims=(8, 8, 2), encoders=("multilens",), dispersions=(("W_lambda",),),
                         max_iters=30, solver_grid=FAST_SOLVER_GRID[:1])
    t = maskless_control(cfg, seed=0)
    (row,) = t.rows
    assert row["maskless_compiles"] and row["masked_compiles"]
    assert row["delta_psnr_db"] == pytest.approx(row["masked_psnr_db"] - row["maskless_psnr_db"])
    assert row["kappa_reduced"] == (row["masked_kappa"] < row["maskless_kappa"])
    assert maskless_control(cfg, seed=0).to_csv() == t.to_csv()
