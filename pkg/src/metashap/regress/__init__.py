from metashap.regress.forest import ForestModel, RegressionTree, build_tree, fit_forest
from metashap.regress.io import load_model, metrics_report, save_model
from metashap.regress.metrics import Metrics, r2, rmse, score
from metashap.regress.mlp import MlpConfig, MlpModel, TrainingDiverged, fit_mlp
from metashap.regress.poly import PolyLinearModel, fit_poly_linear, monomial_powers
from metashap.regress.tuning import TuneResult, tune_forest


def predict(model, X):
    return model.predict(X)


def evaluate(model, X, y):
    return score(y, model.predict(X))
