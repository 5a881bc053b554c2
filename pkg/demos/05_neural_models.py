"""MLP, 1-D CNN and LSTM regressors written on numpy, with a finite-difference gradient check.

    python demos/05_neural_models.py
"""
import numpy as np

from stepforecast.models import make_model
from stepforecast.neural_models import NetConfig, loss_and_grad, net_init, parameter_count

rng = np.random.default_rng(1)
# 48 slots of one channel: a smooth daily rhythm whose amplitude is the target.
amp = rng.uniform(0.5, 2.0, size=400)
t = np.linspace(0, 4 * np.pi, 48)
X = amp[:, None] * np.sin(t)[None, :] + rng.normal(scale=0.1, size=(400, 48))
y = amp - amp.mean()

# %% Check the analytic gradient of a small LSTM against central differences.
config = NetConfig(architecture="lstm", n_channels=1, lstm_hidden=4, lstm_layers=1, dropout=0.0)
params = net_init(config, 6, seed=0)
Xs, ys = X[:5, :6], y[:5]
_, grads = loss_and_grad(config, params, Xs, ys)
worst = 0.0
for name, p in params.items():
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + 1e-5
        up, _ = loss_and_grad(config, params, Xs, ys)
        p[idx] = old - 1e-5
        down, _ = loss_and_grad(config, params, Xs, ys)
        p[idx] = old
        num = (up - down) / 2e-5
        worst = max(worst, abs(num - grads[name][idx]) / max(abs(num), abs(grads[name][idx]), 1e-6))
print(f"LSTM with {parameter_count(params)} parameters, worst relative gradient error {worst:.1e}")

# %% Train each architecture with early stopping on a validation slice.
settings = {"mlp": {"hidden": [32, 16]},
            "cnn": {"conv_channels": [8], "kernel_size": 5, "pool_size": 2},
            "lstm": {"lstm_hidden": 8, "lstm_layers": 1}}
for family, kw in settings.items():
    model = make_model(family, seed=0, max_epochs=60, patience=8, **kw)
    model.fit(X[:300], y[:300], X[300:350], y[300:350])
    err = np.mean(np.abs(model.predict(X[350:]) - y[350:]))
    print(f"{family:>4}: best epoch {model.log_.best_epoch:>2}, test MAE {err:.3f} (predict-zero {np.mean(np.abs(y[350:])):.3f})")
