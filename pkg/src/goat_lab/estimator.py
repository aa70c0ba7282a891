"""scikit-learn style wrappers around :func:`goat_lab.training.train`.

Node tasks carry their own graph and split, so ``fit`` and ``predict``
take a :class:`~goat_lab.graph.Dataset` where sklearn would take ``X``.
Hyperparameters are plain constructor arguments, which makes
``get_params``/``set_params``/``clone`` work unchanged.

    >>> est = GraphNodeRegressor(layer_stack=("goat", "gcn"), max_epochs=50)
    >>> est.fit(dataset).score(dataset, mask="test")
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import NotFittedError

from .training import TrainConfig, evaluate, train
from .validation import check_dataset, check_features, check_mask


class _GraphNodeEstimator(BaseEstimator):
    _task_kind = None

    def __init__(self, layer_stack=("goat", "gat"), hidden_dim=32, second_dim=32,
                 lstm_hidden=16, heads=1, input_linear=0, readout="auto",
                 learning_rate=0.005, weight_decay=0.0, max_epochs=1000, patience=100,
                 dropout_in=0.0, dropout_attn=0.0, seed=0):
        self.layer_stack = layer_stack
        self.hidden_dim = hidden_dim
        self.second_dim = second_dim
        self.lstm_hidden = lstm_hidden
        self.heads = heads
        self.input_linear = input_linear
        self.readout = readout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.dropout_in = dropout_in
        self.dropout_attn = dropout_attn
        self.seed = seed

    def _config(self):
        params = self.get_params()
        params["layer_stack"] = list(params["layer_stack"])
        return TrainConfig(task_kind=self._task_kind, **params)

    def fit(self, dataset, y=None, fixed_ordering=None):
        """Train on ``dataset.train_mask`` with early stopping on ``val_mask``."""
        dataset = check_dataset(dataset, self._task_kind)
        self.config_ = self._config()
        self.result_, self.model_ = train(self.config_, dataset, fixed_ordering=fixed_ordering)
        self.fixed_ordering_ = fixed_ordering
        self.n_features_in_ = dataset.features.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def decision_function(self, dataset):
        self._check_fitted()
        X = check_features(dataset.graph, dataset.features)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"fitted on {self.n_features_in_} features, got {X.shape[1]}")
        return self.model_.forward(dataset.graph, X, ordering=self.fixed_ordering_).data

    def transform(self, dataset):
        """Hidden node representations feeding the output layer."""
        self._check_fitted()
        X = check_features(dataset.graph, dataset.features)
        return self.model_.forward(dataset.graph, X, ordering=self.fixed_ordering_,
                                   embed=True).data


class GraphNodeRegressor(RegressorMixin, _GraphNodeEstimator):
    _task_kind = "regression"

    def predict(self, dataset):
        return self.decision_function(dataset)[:, 0]

    def score(self, dataset, y=None, mask="test"):
        """Negative MSE on ``mask`` so that larger is better, as sklearn expects."""
        self._check_fitted()
        return -evaluate(self.model_, dataset, check_mask(dataset, mask),
                         ordering=self.fixed_ordering_)


class GraphNodeClassifier(ClassifierMixin, _GraphNodeEstimator):
    _task_kind = "classification"

    def fit(self, dataset, y=None, fixed_ordering=None):
        super().fit(dataset, fixed_ordering=fixed_ordering)
        self.classes_ = np.arange(dataset.num_classes)
        return self

    def predict_proba(self, dataset):
        z = self.decision_function(dataset)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, dataset):
        return np.argmax(self.decision_function(dataset), axis=1)

    def score(self, dataset, y=None, mask="test"):
        self._check_fitted()
        return evaluate(self.model_, dataset, check_mask(dataset, mask),
                        ordering=self.fixed_ordering_)
