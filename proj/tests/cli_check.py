#!/usr/bin/env python3
"""End-to-end checks of the wmqre command-line tool.

usage: cli_check.py WMQRE_BINARY SCHEMA_DIR
"""

import csv
import json
import os
import subprocess
import sys
import tempfile

import jsonschema

BIN = sys.argv[1]
SCHEMAS = sys.argv[2]
failures = []


def run(*args, ok_codes=(0,)):
    p = subprocess.run([BIN, *args], capture_output=True, text=True)
    if p.returncode not in ok_codes:
        raise AssertionError(f"{' '.join(args)}: exit {p.returncode}\n{p.stderr}")
    return p


def check(name, fn):
    try:
        fn()
        print(f"ok   {name}")
    except Exception as e:  # noqa: BLE001
        print(f"FAIL {name}: {e}")
        failures.append(name)


def schema(name):
    with open(os.path.join(SCHEMAS, name)) as fh:
        return json.load(fh)


tmp = tempfile.mkdtemp(prefix="wmqre_cli_")
sample_csv = os.path.join(tmp, "sample.csv")
targets_json = os.path.join(tmp, "targets.json")
run("sample", "--seed", "11", "-o", sample_csv, "--targets", targets_json)


def fit_json(path, *extra):
    p = run("fit", path, "-y", "y", "-x", "x", "-g", "cluster", "--format", "json", *extra)
    return json.loads(p.stdout)


def synthetic_round_trip():
    with open(targets_json) as fh:
        targets = json.load(fh)["targets"]
    qs = ",".join(str(t["q"]) for t in targets)
    report = fit_json(sample_csv, "--unit-weight", "w_unit", "--cluster-weight", "w_cluster", "-q", qs)
    jsonschema.validate(report, schema("fit.schema.json"))
    assert report["input"]["units"] == 1500
    for t, fit in zip(targets, report["fits"]):
        assert fit["status"] == "converged", fit
        for k, coef in enumerate(fit["coefficients"]):
            gap = abs(coef["estimate"] - t["census"][k])
            assert gap <= 3 * coef["se"], f"q={t['q']} {coef['name']}: |{coef['estimate']} - {t['census'][k]}| > 3 SE"


def unit_weights_scale_identity():
    path = os.path.join(tmp, "unit.csv")
    with open(sample_csv) as src, open(path, "w", newline="") as dst:
        rows = list(csv.DictReader(src))
        w = csv.writer(dst)
        w.writerow(["cluster", "y", "x", "w1", "w2"])
        for r in rows:
            w.writerow([r["cluster"], r["y"], r["x"], "1", "1"])
    base = ["fit", path, "-y", "y", "-x", "x", "-g", "cluster", "--unit-weight", "w1",
            "--cluster-weight", "w2", "--format", "csv", "-q", "0.25,0.5"]
    a = run(*base, "--scale", "none").stdout
    b = run(*base, "--scale", "method2").stdout
    assert a == b, "outputs differ"


def default_quantile_grid():
    report = fit_json(sample_csv)
    assert [f["q"] for f in report["fits"]] == [0.1, 0.25, 0.5, 0.75, 0.9]
    jsonschema.validate(report, schema("fit.schema.json"))
    table = run("fit", sample_csv, "-y", "y", "-x", "x", "-g", "cluster").stdout
    assert "***" in table and "p<0.01" in table


def malformed_header():
    path = os.path.join(tmp, "bad.csv")
    with open(path, "w") as fh:
        fh.write("cluster,yy,x\n1,2,3\n")
    p = run("fit", path, "-y", "y", "-x", "x", "-g", "cluster", ok_codes=(2,))
    assert "'y'" in p.stderr, p.stderr


def nonconstant_cluster_weight():
    path = os.path.join(tmp, "w2.csv")
    with open(path, "w") as fh:
        fh.write("g,y,x,w2\n1,1,0,1\n1,2,1,2\n2,3,0,1\n2,4,1,1\n")
    p = run("fit", path, "-y", "y", "-x", "x", "-g", "g", "--cluster-weight", "w2", ok_codes=(2,))
    assert "cluster '1'" in p.stderr, p.stderr


def missing_rows_counted():
    path = os.path.join(tmp, "na.csv")
    with open(sample_csv) as src, open(path, "w") as dst:
        lines = src.read().splitlines()
        dst.write(lines[0] + "\n")
        for i, line in enumerate(lines[1:]):
            if i % 50 == 0:
                parts = line.split(",")
                parts[1] = "NA"
                line = ",".join(parts)
            dst.write(line + "\n")
    p = run("fit", path, "-y", "y", "-x", "x", "-g", "cluster", "--format", "json", "-q", "0.5")
    assert "dropped 30 of 1500" in p.stderr, p.stderr
    assert json.loads(p.stdout)["input"]["rows_dropped"] == 30


def nonconvergence_exit_code():
    args = ["fit", sample_csv, "-y", "y", "-x", "x", "-g", "cluster", "-q", "0.5", "--max-iter", "1", "--tol", "1e-14"]
    run(*args, ok_codes=(1,))
    run(*args, "--allow-nonconverged", ok_codes=(0,))


def bad_arguments():
    run("fit", sample_csv, "-y", "y", "-x", "x", "-g", "cluster", "-q", "1.5", ok_codes=(2,))
    run("fit", sample_csv, "-y", "y", "-x", "x", "-g", "cluster", "--scale", "method7", ok_codes=(2,))
    run("fit", os.path.join(tmp, "nope.csv"), "-y", "y", "-g", "cluster", ok_codes=(2,))
    run("simulate", "--m", "500", ok_codes=(2,))
    run("bogus", ok_codes=(2,))


def simulate_deterministic():
    a = run("simulate", "--replications", "10", "--seed", "42", "--format", "json").stdout
    b = run("simulate", "--replications", "10", "--seed", "42", "--format", "json", "--threads", "2").stdout
    assert a == b, "simulate output differs between runs"
    report = json.loads(a)
    jsonschema.validate(report, schema("simulate.schema.json"))
    assert report["rng"] == "philox4x32-10" and report["seed"] == 42 and report["version"]
    table = run("simulate", "--replications", "10", "--seed", "42").stdout
    assert "Weighted-MQRE" in table and "LMM" in table


def simulate_consistency():
    errs = []
    for m in ("25", "100"):
        out = run("simulate", "-R", "40", "--seed", "5", "--m", m, "--quantiles", "0.5", "--no-lmm",
                  "--format", "json").stdout
        rows = json.loads(out)["rows"]
        errs.append(next(r["mean_abs_error_census"] for r in rows
                         if r["method"] == "Weighted-MQRE" and r["parameter"] == "beta0"))
    assert errs[1] < errs[0], errs


for name, fn in [
    ("synthetic round trip within 3 SE of census target", synthetic_round_trip),
    ("unit weights: --scale none equals --scale method2", unit_weights_scale_identity),
    ("default quantile grid and stars", default_quantile_grid),
    ("malformed header exits 2 naming the column", malformed_header),
    ("non-constant cluster weight exits 2", nonconstant_cluster_weight),
    ("missing rows dropped and counted", missing_rows_counted),
    ("non-convergence exits 1 unless allowed", nonconvergence_exit_code),
    ("bad arguments exit 2", bad_arguments),
    ("simulate is deterministic and schema-valid", simulate_deterministic),
    ("simulate error shrinks with m", simulate_consistency),
]:
    check(name, fn)

sys.exit(1 if failures else 0)
