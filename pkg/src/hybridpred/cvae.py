"""
Conditional variational autoencoder over joint future trajectories.

The condition ``X`` is a flat encoding of the scene history and the target
``Y`` the futures of both vehicles as offsets from their current states.
Both are standardized per coordinate before entering the networks.
"""

from __future__ import annotations

import json
import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DatasetTooSmall, ShapeMismatch
from .geometry import Trajectory
from .nn import AdamState, DenseNetwork, apply_update

log = logging.getLogger(__name__)

__all__ = [
    "history_length",
    "encode_history",
    "encode_future",
    "decode_future",
    "training_arrays",
    "reparameterize",
    "kl_divergence",
    "CVAE",
    "sample_joint",
]


def history_length(n_states=6, n_surround=2):
    """Length of the history encoding: two vehicles plus flagged surround slots."""
    return 2 * 2 * n_states + n_surround * (2 * n_states + 1)


def encode_history(scene, n_surround=2):
    """Flat history vector ``X``.

    Layout: predicted ``(s, d)`` states, ego states, then ``n_surround``
    slots of states plus a presence flag. Surrounding vehicles are taken
    nearest the cross point first; empty slots repeat the ego's current
    state with flag 0.
    """
    pred = scene.pred_history.states
    ego = scene.ego_history.states
    n = len(pred)
    if len(ego) != n:
        raise ShapeMismatch("pred and ego histories differ in length")
    parts = [pred.ravel(), ego.ravel()]
    surr = sorted(scene.surr_histories, key=lambda t: abs(t.states[-1, 0]))[:n_surround]
    for k in range(n_surround):
        if k < len(surr):
            st = surr[k].states
            if len(st) != n:
                raise ShapeMismatch("surrounding history length differs")
            parts.append(np.r_[st.ravel(), 1.0])
        else:
            parts.append(np.r_[np.tile(ego[-1], n), 0.0])
    return np.concatenate(parts)


def encode_future(scene, pred_future=None, ego_future=None):
    """Flat target ``Y``: predicted then ego future offsets from current states."""
    pred_future = scene.pred_future if pred_future is None else pred_future
    ego_future = scene.ego_future if ego_future is None else ego_future
    p = np.asarray(getattr(pred_future, "states", pred_future)) - scene.current("pred")
    e = np.asarray(getattr(ego_future, "states", ego_future)) - scene.current("ego")
    if p.shape != e.shape:
        raise ShapeMismatch("pred and ego futures differ in length")
    return np.concatenate([p.ravel(), e.ravel()])


def decode_future(Y, scene):
    """Inverse of :func:`encode_future`; returns ``(pred, ego)`` trajectories.

    ``Y`` may be a batch of shape ``(n, 4 T)``; a list of pairs is returned then.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 2:
        return [decode_future(y, scene) for y in Y]
    if Y.size % 4:
        raise ShapeMismatch("future vector length must be a multiple of 4")
    half = Y.size // 2
    pred = Y[:half].reshape(-1, 2) + scene.current("pred")
    ego = Y[half:].reshape(-1, 2) + scene.current("ego")
    return (
        Trajectory(pred, scene.dt, scene.pred_history.path_id),
        Trajectory(ego, scene.dt, scene.ego_history.path_id),
    )


def training_arrays(scenes, n_surround=2):
    """Stack ``(X, Y)`` for scenes that carry ground-truth futures."""
    X = np.array([encode_history(s, n_surround) for s in scenes])
    Y = np.array([encode_future(s) for s in scenes])
    return X, Y


def reparameterize(mu, logvar, noise):
    """``mu + exp(logvar / 2) * noise``."""
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if mu.shape != logvar.shape or mu.shape != noise.shape:
        raise ShapeMismatch("mu, logvar and noise must have equal shapes")
    return mu + np.exp(0.5 * logvar) * noise


def kl_divergence(mu, logvar):
    """KL of ``N(mu, exp(logvar))`` from the unit Gaussian, summed over the last axis."""
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    return 0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=-1)


class CVAE(BaseEstimator):
    """Encoder/decoder pair trained on the beta-weighted ELBO.

    Parameters
    ----------
    latent_dim : int
    hidden : tuple of int
        Hidden layer widths shared by encoder and decoder.
    beta : float
        Weight of the KL term.
    epochs, batch_size : int
    learning_rate : float
    seed : int
        Seeds initialization, shuffling and latent noise.

    Attributes
    ----------
    encoder_, decoder_ : DenseNetwork
    x_mean_, x_scale_, y_mean_, y_scale_ : ndarray
        Standardization constants.
    loss_curve_ : ndarray
        Mean minibatch loss per epoch.
    """

    def __init__(
        self,
        latent_dim=8,
        hidden=(64, 64),
        beta=0.1,
        epochs=100,
        batch_size=64,
        learning_rate=1e-3,
        seed=0,
    ):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.beta = beta
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    # -- setup -------------------------------------------------------------

    def _validate_params(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")

    def initialize(self, n_x, n_y, rng=None):
        """Create randomly initialized networks for the given sizes."""
        rng = np.random.default_rng(self.seed) if rng is None else rng
        L = int(self.latent_dim)
        hidden = [int(h) for h in self.hidden]
        self.encoder_ = DenseNetwork.initialize([n_x + n_y, *hidden, 2 * L], rng)
        self.decoder_ = DenseNetwork.initialize([n_x + L, *hidden, n_y], rng)
        self.x_mean_ = np.zeros(n_x)
        self.x_scale_ = np.ones(n_x)
        self.y_mean_ = np.zeros(n_y)
        self.y_scale_ = np.ones(n_y)
        return self

    @property
    def n_x(self):
        return self.x_mean_.size

    @property
    def n_y(self):
        return self.y_mean_.size

    def get_flat_parameters(self):
        return np.concatenate([self.encoder_.parameters, self.decoder_.parameters])

    def set_flat_parameters(self, params):
        params = np.asarray(params, dtype=float)
        n_enc = self.encoder_.parameters.size
        if params.size != n_enc + self.decoder_.parameters.size:
            raise ShapeMismatch("wrong number of parameters")
        self.encoder_.parameters = params[:n_enc].copy()
        self.decoder_.parameters = params[n_enc:].copy()

    # -- normalization -----------------------------------------------------

    @staticmethod
    def _scale(x):
        sd = x.std(axis=0)
        return np.where(sd > 1e-8, sd, 1.0)

    def normalize_x(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean_) / self.x_scale_

    def normalize_y(self, Y):
        return (np.asarray(Y, dtype=float) - self.y_mean_) / self.y_scale_

    def denormalize_y(self, Yn):
        return np.asarray(Yn, dtype=float) * self.y_scale_ + self.y_mean_

    # -- forward pieces ----------------------------------------------------

    def _check_xy(self, X, Y=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_x:
            raise ShapeMismatch(f"X has {X.shape[1]} columns, model expects {self.n_x}")
        if Y is None:
            return X
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape != (X.shape[0], self.n_y):
            raise ShapeMismatch(f"Y has shape {Y.shape}, expected {(X.shape[0], self.n_y)}")
        return X, Y

    def encode(self, X, Y):
        """Posterior mean and log-variance, each of length ``latent_dim``."""
        check_is_fitted(self, "encoder_")
        single = np.ndim(X) == 1
        X, Y = self._check_xy(X, Y)
        out = self.encoder_.forward(np.hstack([self.normalize_x(X), self.normalize_y(Y)]))
        L = self.latent_dim
        mu, logvar = out[:, :L], out[:, L:]
        return (mu[0], logvar[0]) if single else (mu, logvar)

    def decode(self, X, z):
        """Decoded futures in original units for conditions ``X`` and latents ``z``."""
        check_is_fitted(self, "decoder_")
        single = np.ndim(X) == 1 and np.ndim(z) == 1
        X = self._check_xy(X)
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.latent_dim:
            raise ShapeMismatch("latent has wrong dimension")
        Xn = np.broadcast_to(self.normalize_x(X), (z.shape[0], self.n_x)) if len(X) == 1 else self.normalize_x(X)
        Y = self.denormalize_y(self.decoder_.forward(np.hstack([Xn, z])))
        return Y[0] if single else Y

    def elbo_loss(self, X, Y, noise, beta=None, return_grad=False):
        """Mean over the batch of ``||Yn - decode||^2 + beta * KL`` in normalized units.

        Parameters
        ----------
        X, Y : ndarray
            Raw (unnormalized) conditions and targets.
        noise : ndarray (batch, latent_dim)
            Standard normal draws for the reparameterization.
        return_grad : bool
            Also return the gradient w.r.t. ``get_flat_parameters()``.
        """
        check_is_fitted(self, "encoder_")
        X, Y = self._check_xy(X, Y)
        if len(X) == 0:
            raise ShapeMismatch("empty batch")
        return self._loss_normalized(self.normalize_x(X), self.normalize_y(Y), noise, beta, return_grad)

    def _loss_normalized(self, Xn, Yn, noise, beta=None, return_grad=False):
        beta = self.beta if beta is None else beta
        B = len(Xn)
        L = self.latent_dim
        noise = np.atleast_2d(np.asarray(noise, dtype=float))
        if noise.shape != (B, L):
            raise ShapeMismatch(f"noise must have shape {(B, L)}")
        enc_out, enc_cache = self.encoder_.forward_with_cache(np.hstack([Xn, Yn]))
        mu, logvar = enc_out[:, :L], enc_out[:, L:]
        std = np.exp(0.5 * logvar)
        z = mu + std * noise
        Y_hat, dec_cache = self.decoder_.forward_with_cache(np.hstack([Xn, z]))
        resid = Y_hat - Yn
        recon = np.sum(resid * resid, axis=1)
        kl = kl_divergence(mu, logvar)
        loss = float(np.mean(recon + beta * kl))
        if not return_grad:
            return loss
        g_dec, g_dec_in = self.decoder_.backward(dec_cache, 2.0 * resid / B)
        dz = g_dec_in[:, self.n_x :]
        dmu = dz + beta * mu / B
        dlogvar = dz * noise * 0.5 * std + beta * 0.5 * (np.exp(logvar) - 1.0) / B
        g_enc, _ = self.encoder_.backward(enc_cache, np.hstack([dmu, dlogvar]))
        return loss, np.concatenate([g_enc, g_dec])

    # -- training ----------------------------------------------------------

    def fit(self, X, Y):
        """Train on raw ``(X, Y)`` arrays (see :func:`training_arrays`)."""
        self._validate_params()
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y):
            raise ShapeMismatch("X and Y must be 2-D with equal row counts")
        if len(X) < 10:
            raise DatasetTooSmall(f"need at least 10 samples, got {len(X)}")
        rng = np.random.default_rng(self.seed)
        self.initialize(X.shape[1], Y.shape[1], rng)
        self.x_mean_, self.x_scale_ = X.mean(axis=0), self._scale(X)
        self.y_mean_, self.y_scale_ = Y.mean(axis=0), self._scale(Y)
        Xn, Yn = self.normalize_x(X), self.normalize_y(Y)
        params = self.get_flat_parameters()
        state = AdamState(learning_rate=self.learning_rate)
        curve = []
        n = len(X)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                noise = rng.standard_normal((len(idx), self.latent_dim))
                loss, grad = self._loss_normalized(Xn[idx], Yn[idx], noise, return_grad=True)
                params, state = apply_update(state, params, grad)
                self.set_flat_parameters(params)
                total += loss * len(idx)
            curve.append(total / n)
            log.debug("epoch %d loss %.6f", epoch, curve[-1])
        self.loss_curve_ = np.asarray(curve)
        return self

    # -- inference ---------------------------------------------------------

    def sample(self, X, n, rng):
        """``n`` decoded futures (raw units) for one condition vector, z ~ N(0, I)."""
        if n < 1:
            raise ValueError("n must be at least 1")
        z = rng.standard_normal((int(n), self.latent_dim))
        return self.decode(np.asarray(X, dtype=float)[None], z)

    def predict(self, X):
        """Decoded futures at the prior mean ``z = 0``."""
        X = self._check_xy(X)
        return self.decode(X, np.zeros((len(X), self.latent_dim)))

    # -- persistence -------------------------------------------------------

    def to_dict(self):
        check_is_fitted(self, "encoder_")
        data = {"params": self.get_params()}
        data["params"]["hidden"] = list(self.hidden)
        data["encoder"] = self.encoder_.to_dict()
        data["decoder"] = self.decoder_.to_dict()
        for name in ("x_mean_", "x_scale_", "y_mean_", "y_scale_"):
            data[name] = getattr(self, name).tolist()
        if hasattr(self, "loss_curve_"):
            data["loss_curve"] = self.loss_curve_.tolist()
        return data

    @classmethod
    def from_dict(cls, data):
        params = dict(data["params"])
        params["hidden"] = tuple(params["hidden"])
        model = cls(**params)
        model.encoder_ = DenseNetwork.from_dict(data["encoder"])
        model.decoder_ = DenseNetwork.from_dict(data["decoder"])
        for name in ("x_mean_", "x_scale_", "y_mean_", "y_scale_"):
            setattr(model, name, np.asarray(data[name], dtype=float))
        if np.any(model.x_scale_ <= 0) or np.any(model.y_scale_ <= 0):
            raise ValueError("normalization scales must be positive")
        if "loss_curve" in data:
            model.loss_curve_ = np.asarray(data["loss_curve"])
        return model

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def sample_joint(model, scene, n, rng, n_surround=2):
    """``n`` joint ``(pred, ego)`` future trajectory pairs for a scene."""
    X = encode_history(scene, n_surround)
    return decode_future(model.sample(X, n, rng), scene)
