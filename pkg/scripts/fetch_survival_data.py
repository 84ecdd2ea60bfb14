"""Extract SUPPORT and METABRIC flat tables into data/*.csv.

SUPPORT comes from the raw SUPPORT2 table (9,105 patients) bundled with the
``auton-survival`` wheel; METABRIC comes from the DeepSurv release (1,904
patients) bundled with the ``survival-datasets`` wheel.  Both wheels are
downloaded with ``pip download --no-deps`` into a scratch directory; nothing
is installed.  Requires pandas and pyarrow.

    python scripts/fetch_survival_data.py [--out data]
"""
import argparse
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import pandas as pd

# the 14 covariates used in the usual SUPPORT benchmark
SUPPORT_COLUMNS = {
    "age": "age",
    "sex": "sex_male",
    "race": "race",
    "num.co": "num_co",
    "diabetes": "diabetes",
    "dementia": "dementia",
    "ca": "cancer",
    "meanbp": "meanbp",
    "hrt": "hrt",
    "resp": "resp",
    "temp": "temp",
    "wblc": "wblc",
    "sod": "sod",
    "crea": "crea",
}

SUPPORT_FILL = {"wblc": 9.0, "crea": 1.01}


def _wheel(name, workdir):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", workdir, name],
        check=True,
    )
    stem = name.replace("-", "_").lower()
    for path in Path(workdir).glob("*.whl"):
        if path.name.lower().startswith(stem):
            return zipfile.ZipFile(path)
    raise FileNotFoundError(name)


def support_table(workdir):
    zf = _wheel("auton-survival", workdir)
    raw = pd.read_csv(io.BytesIO(zf.read("auton_survival/datasets/support2.csv")))
    df = pd.DataFrame({"duration": raw["d.time"].astype(float), "event": raw["death"].astype(int)})
    for src, dst in SUPPORT_COLUMNS.items():
        col = raw[src]
        if src == "sex":
            col = (col == "male").astype(int)
        elif src == "race":
            col = col.fillna("missing").astype("category").cat.codes
        elif src == "ca":
            col = col.map({"no": 0, "yes": 1, "metastatic": 2})
        df[dst] = col
    # fill values recommended by the SUPPORT documentation, medians otherwise
    for col, value in SUPPORT_FILL.items():
        df[col] = df[col].fillna(value)
    return df.fillna(df.median(numeric_only=True))


def metabric_table(workdir):
    zf = _wheel("survival-datasets", workdir)
    raw = pd.read_feather(io.BytesIO(zf.read("survdata/metabric.feather")))
    cols = ["duration", "event"] + [c for c in raw.columns if c.startswith("x")]
    out = raw[cols].copy()
    out["event"] = out["event"].astype(int)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        for name, fn in [("support", support_table), ("metabric", metabric_table)]:
            df = fn(tmp)
            df.to_csv(out / f"{name}.csv", index=False, float_format="%.10g")
            print(f"{name}: {len(df)} rows, censored {1 - df['event'].mean():.3f}")


if __name__ == "__main__":
    main()
