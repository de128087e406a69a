"""Runs every qmop subcommand and validates its JSON against the shipped schema."""
import argparse
import json
import pathlib
import subprocess
import sys

import jsonschema


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--qmop", required=True)
    ap.add_argument("--schema", required=True)
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--configs", help="directory of example configs to exercise")
    args = ap.parse_args()

    work = pathlib.Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    schema = json.loads(pathlib.Path(args.schema).read_text())
    validator = jsonschema.Draft202012Validator(schema)
    jsonschema.Draft202012Validator.check_schema(schema)

    a, b = work / "a.qft", work / "b.qft"
    for seed, path in ((1, a), (2, b)):
        subprocess.run([args.qmop, "synth", "--seed", str(seed), "--grid", "4x4", "--out", str(path)],
                       check=True)

    cases = {
        "compress": ["compress", "--features", str(a)],
        "compress-threshold": ["compress", "--features", str(a), "--mode", "threshold:0.3"],
        "compress-stage1": ["compress", "--features", str(a), "--mode", "stage1", "--dump-tokens"],
        "compress-train": ["compress", "--features", str(a), "--mode", "train", "--no-timing"],
        "compress-batch": ["compress", "--features", str(a), "--features", str(b), "--jobs", "2"],
        "gradcheck": ["gradcheck", "--trials", "1"],
        "cost": ["cost", "--tokens", "144"],
        "cost-zero": ["cost", "--tokens", "0"],
        "train-1": ["train-toy", "--stage", "1", "--steps", "5"],
        "train-2": ["train-toy", "--stage", "2", "--steps", "5", "--no-timing"],
    }
    if args.configs:
        cfg = pathlib.Path(args.configs)
        g24 = work / "g24.qft"
        subprocess.run([args.qmop, "synth", "--seed", "3", "--grid", "24x24", "--cvis", "16",
                        "--ctxt", "8", "--out", str(g24)], check=True)
        cases["config-tiny"] = ["train-toy", "--config", str(cfg / "tiny.json"), "--steps", "3"]
        for name in ("grid24_m144", "grid24_m64"):
            cases["config-" + name] = ["compress", "--features", str(g24), "--config",
                                       str(cfg / f"{name}.json")]
    failures = 0
    for name, argv in cases.items():
        proc = subprocess.run([args.qmop, *argv], capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"FAIL {name}: exit {proc.returncode}: {proc.stderr.strip()}")
            failures += 1
            continue
        errors = sorted(validator.iter_errors(json.loads(proc.stdout)), key=lambda e: e.path)
        if errors:
            failures += 1
            print(f"FAIL {name}: {errors[0].message}")
        else:
            print(f"ok   {name}")

    # The schema must reject a report with an unexpected field.
    bogus = json.loads(subprocess.run([args.qmop, "cost", "--tokens", "4"], capture_output=True,
                                      text=True, check=True).stdout)
    bogus["surprise"] = 1
    if validator.is_valid(bogus):
        print("FAIL schema accepted an unknown field")
        failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
