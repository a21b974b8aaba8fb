"""Train on your own CSV file.

A JSON schema names the feature columns, the main target and the auxiliary
target.  Continuous features are z-scored and categorical ones one-hot
encoded, both using training rows only.  Here we write a small CSV
ourselves: the main task is binary (scored by AUC) and the auxiliary task
is a related continuous quantity.

Run:  python3 demos/05_csv_pipeline.py
"""

import csv
import os

import numpy as np

from hydalearn import experiments as ex
from hydalearn.data import CsvSchema

os.makedirs("demo_out", exist_ok=True)
rng = np.random.default_rng(0)
n = 600
age = rng.normal(50, 12, n)
dose = rng.uniform(0, 10, n)
site = rng.choice(["north", "south", "west"], n)
risk = 0.04 * (age - 50) + 0.3 * dose + (site == "west") * 0.8 + rng.normal(0, 1, n)
label = (risk > np.median(risk)).astype(int)

with open("demo_out/patients.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["age", "dose", "site", "outcome", "risk_score"])
    for row in zip(age, dose, site, label, risk):
        w.writerow(row)

schema = CsvSchema.from_dict({
    "columns": [
        {"name": "age"},
        {"name": "dose"},
        {"name": "site", "kind": "categorical"},
        {"name": "outcome", "role": "main", "kind": "raw"},
        {"name": "risk_score", "role": "aux", "kind": "raw"},
    ],
    "task_kinds": ["classification", "regression"],
})

spec = ex.ExperimentSpec(
    name="patients",
    data={"path": "demo_out/patients.csv", "schema": schema.to_dict(), "fractions": [0.6, 0.2, 0.2]},
    encoder_sizes=[16], head_sizes=[8], strategies=["stl", "hydalearn"], seeds=[0, 1],
)
table = ex.run_suite(spec, value_name="test_metric_main", out_dir="demo_out")[0]
print(table.format("patients"))
