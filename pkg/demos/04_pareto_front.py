"""
Trading reproducibility against prognostic value
================================================

Places every feature at (CCC, univariate C-index), finds the Pareto
front, clusters the CCC table with Ward linkage, and writes the report
files (CSV tables and SVG figures) to a scratch directory.

Run with ``python3 demos/04_pareto_front.py`` (about 1 minute).
"""
import tempfile

from radrepro.analysis import ParetoPoint, emit_reports, pareto_front, univariate_cindex_rows, ward_cluster
from radrepro.pipeline import reproducibility, survival_designs, synth_feature_table
from radrepro.preprocess import get_setting
from radrepro.synth import SynthSpec, generate_outcomes, subject_params

settings = [get_setting("L2"), get_setting("S3")]
repro, _, wilcoxon = reproducibility(synth_feature_table(SynthSpec(n_subjects=8, asir_levels=(0, 20), rng_seed=1), settings))
surv = SynthSpec(n_subjects=80, thickness_levels=(5.0,), asir_levels=(20,), hazard_beta=1.5, rng_seed=2)
outcomes = generate_outcomes(surv, [subject_params(surv, i) for i in range(surv.n_subjects)])
designs = survival_designs(synth_feature_table(surv, settings), repro, outcomes)
rows = univariate_cindex_rows(designs)

# one point per (feature, ROI, setting): generalized CCC against univariate C-index
ccc = {(r.feature_family, r.feature_name, r.roi, r.extractor): r.ccc for r in repro if r.kind == "generalized"}
points = []
for r in rows:
    key = (r["feature_family"], r["feature_name"], r["roi"], r["extractor"])
    if ccc.get(key, float("nan")) == ccc.get(key, float("nan")):
        points.append(ParetoPoint(f"{key[0]}.{key[1]}", r["roi"], r["extractor"], ccc[key], r["cindex"]))
front = pareto_front(points)
print(f"{len(points)} points, {len(front)} on the Pareto front:")
for p in front:
    print(f"  {p.extractor:>3} {p.roi:<6} {p.feature_id:<40} CCC {p.ccc:.3f}  C {p.cindex:.3f}")

# Ward clustering of features by their CCC across settings
gen = [r for r in repro if r.kind == "generalized" and r.roi == "tumor" and r.ccc == r.ccc]
names = sorted({f"{r.feature_family}.{r.feature_name}" for r in gen})
lookup = {(f"{r.feature_family}.{r.feature_name}", r.extractor): r.ccc for r in gen}
matrix = [[lookup.get((n, x), float("nan")) for x in ("L2", "S3")] for n in names]
tree = ward_cluster(matrix, names)
print(f"\nWard tree over {len(tree.leaf_order)} features, top merge height {tree.heights[-1]:.3f}")

out = tempfile.mkdtemp(prefix="radrepro_reports_")
files = emit_reports(out, repro, rows, wilcoxon_rows=wilcoxon)
print(f"\n{len(files)} report files in {out}:")
for name in sorted(files):
    print("  ", name)
