"""Ridge, CART and gradient boosting on a toy problem, then expanding-window grid search.

    python demos/04_classic_models.py
"""
import numpy as np

from stepforecast.classic_models import GBConfig, RidgeConfig, TreeConfig, gbr_fit, ridge_fit, tree_depth, tree_fit
from stepforecast.eval import grid_search, mae, ts_cv_folds
from stepforecast.models import DEFAULT_GRIDS, make_model

rng = np.random.default_rng(0)
X = rng.uniform(-2, 2, size=(300, 3))
y = 3 * X[:, 0] - 2 * X[:, 1] + np.where(X[:, 2] > 0, 4.0, 0.0) + rng.normal(scale=0.3, size=300)

# %% Ridge shrinks as lambda grows; the intercept is never penalised.
for lam in (0.0, 10.0, 1000.0):
    m = ridge_fit(X, y, RidgeConfig(lam))
    print(f"lambda={lam:>7}: w={np.round(m.weights, 3)}, b={m.intercept:.3f}")

# %% A depth-1 tree picks the single most useful threshold.
root = tree_fit(X, y, TreeConfig(max_depth=1))
print(f"root split: x{root.feature} <= {root.threshold:.3f}")
print("unbounded tree depth:", tree_depth(tree_fit(X, y, TreeConfig(min_samples_leaf=5))))

# %% Boosting: training error never goes up from stage to stage.
gb = gbr_fit(X, y, GBConfig(n_stages=50, learning_rate=0.1))
print("train MSE at stages 1, 10, 50:", [round(gb.train_mse[i], 3) for i in (1, 10, 50)])

# %% Expanding-window folds and a grid search over regularisation strength.
for train_idx, val_idx in ts_cv_folds(len(y), k=5):
    print(f"  train [0, {train_idx.stop}) -> validate [{val_idx.start}, {val_idx.stop})")
search = grid_search("ridge", DEFAULT_GRIDS["ridge"], X, y)
print("best:", search.best_params, f"cv MAE {search.best_score:.3f}")
best = make_model("ridge", **search.best_params).fit(X[:250], y[:250])
print(f"held-out MAE {mae(y[250:], best.predict(X[250:])):.3f}")
