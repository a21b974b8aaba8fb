"""A miniature experiment suite: every strategy, three seeds, one table.

Within a seed, every strategy gets the same data, the same initial
parameters and the same batch order.  The printed checksums show this.
Artifacts go to ./demo_out/ in the layout that the ``suite`` CLI command
uses.

Run:  python3 demos/04_compare_strategies.py
"""

from dataclasses import replace

from hydalearn import experiments as ex

spec = replace(ex.exp2_spec(max_epochs=40), seeds=[0, 1, 2])
table, results = ex.run_suite(spec, out_dir="demo_out")

print(table.format("Exp2"))
print()
for r in results:
    s = r.summary
    if s["seed"] == 0:
        print(f"seed 0 {s['strategy']:>10}: data {s['data_checksum'][:12]}  init {s['init_checksum'][:12]}")
print("\nper-seed rows:", "demo_out/exp2/results.csv")
