"""Full chain: benchmark every family, sweep window sizes, then turn a prediction into a goal.

    python demos/06_benchmark_sweep_goals.py
"""
from stepforecast.app import GoalConfig, adaptive_goal, predict_next_day, preprocessing_document
from stepforecast.dataset import FeatureConfig, WindowConfig, apply_scaler, build_windows, chronological_split, fit_scaler
from stepforecast.eval import SweepSpec, benchmark, config_sweep
from stepforecast.ingest import SynthConfig, generate_synthetic_corpus
from stepforecast.models import make_model, model_to_document
from stepforecast.pipeline import PipelineConfig, run_pipeline

# Users with steady routines, so yesterday says something about tomorrow.
records = generate_synthetic_corpus(SynthConfig(n_users=40, n_days=60, seed=0, user_level_sigma=0.5,
                                                day_noise_sigma=0.05))
pconf = PipelineConfig(window_days=3)
result = run_pipeline(records, pconf)
wconf, fconf = WindowConfig(3, "hourly"), FeatureConfig()
train, val, test = chronological_split(build_windows(result.grids, wconf, fconf))
scaler = fit_scaler(train)
tr, va = apply_scaler(scaler, train), apply_scaler(scaler, val)

# %% Benchmark with small settings; errors are in steps.
small = {"ridge": {"lam": 10.0}, "tree": {"max_depth": 5}, "gb": {"n_stages": 100, "max_depth": 3},
         "mlp": {"seed": 0}, "cnn": {"seed": 0, "max_epochs": 30}, "lstm": {"seed": 0, "max_epochs": 10}}
models = [make_model(f, **kw).fit(tr.X, tr.y, va.X, va.y) for f, kw in small.items()]
report = benchmark(models, train, test, scaler)
print(report.render_table())

# %% Probe model across granularity and window size.
sweep = config_sweep(records, SweepSpec(("hourly", "daily"), (1, 3, 5)))
print(sweep.to_matrix_csv())

# %% Tomorrow's goal for one user from the ridge model.
doc = model_to_document(models[0], preprocessing_document(pconf, result.outlier_bounds, wconf, fconf, scaler))
user = result.grids[0].user_id
predicted = predict_next_day(doc, [r for r in records if r.user_id == user])
print(f"{user}: predicted {predicted:.0f} steps, goal {adaptive_goal(predicted)}, "
      f"goal with ceiling 9000: {adaptive_goal(predicted, GoalConfig(ceiling=9000))}")
