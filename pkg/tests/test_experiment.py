import csv
import json

import pytest

from lprobe.config import parse_config
from lprobe.experiment import ExperimentPlan, load_plan, run_experiment, stability_table

ARITY = """\
[suite]
input_dim = 4
per_split_counts = 60, 30, 30
num_domains = 14

[model]
hidden_dims = 3

[train]
epochs = 1

[measure]
binary_search_iters = 2
ascent_steps = 1

[experiment]
objectives = baseline, sam, fisher, consistency
seeds = 0, 1, 2, 3, 4, 5, 6, 7
"""

SMALL = ARITY.replace("num_domains = 14", "num_domains = 5").replace(
    "seeds = 0, 1, 2, 3, 4, 5, 6, 7", "seeds = 0, 1, 2").replace("epochs = 1", "epochs = 2")


def plan(text):
    return ExperimentPlan.from_config(parse_config(text))


def test_full_grid_arity(tmp_path):
    bundle = run_experiment(plan(ARITY), tmp_path)
    assert len(bundle.reports) == 4 * 8 * 14 == 448
    assert not bundle.partial
    with open(tmp_path / "reports.csv") as f:
        assert sum(1 for _ in csv.reader(f)) == 1 + 448
    assert len(list((tmp_path / "history").iterdir())) == 32
    stab = {row[0]: row for row in stability_table(bundle.reports)}
    assert set(stab) == {"baseline", "sam", "fisher", "consistency"}
    assert all(row[3] == 8 for row in stab.values())


@pytest.fixture(scope="module")
def serial_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("serial")
    run_experiment(plan(SMALL), out)
    return out


def test_rerun_is_byte_identical(tmp_path, serial_run):
    run_experiment(plan(SMALL), tmp_path)
    for name in ("reports.csv", "correlations.csv", "stability.csv", "plan.json", "bundle.json"):
        assert (tmp_path / name).read_bytes() == (serial_run / name).read_bytes(), name


def test_jobs_do_not_change_results(tmp_path, serial_run):
    run_experiment(plan(SMALL), tmp_path, jobs=3)
    for name in ("reports.csv", "correlations.csv"):
        assert (tmp_path / name).read_bytes() == (serial_run / name).read_bytes(), name


def test_plan_json_reloads_to_same_plan(serial_run):
    assert load_plan(serial_run / "plan.json") == plan(SMALL)


def test_bundle_records_all_groupings(serial_run):
    with open(serial_run / "correlations.csv") as f:
        groups = {row["group"].split(":")[0] for row in csv.DictReader(f)}
    assert groups == {"model", "objective", "pooled"}
    meta = json.loads((serial_run / "bundle.json").read_text())
    assert meta["partial"] is False and len(meta["runs"]) == 12
