"""Semi-supervised VAE (M2) over fingerprint feature vectors.

Three networks make up the model:

* ``encoder_y``: x -> class logits, giving q(y|x) = Cat(softmax(logits)).
* ``encoder_z``: [x, onehot(y)] -> [mu, s] with sigma = softplus(s) + 1e-6.
* ``decoder``:   [onehot(y), z] -> per-feature outputs. The first
  ``n_gaussian`` features are unit-variance Gaussians with mean equal to the
  output; the rest are Bernoulli with the output as logit.

Losses are negated bounds (smaller is better) and are returned as sums over
the batch. ``p(y)`` is uniform and ``p(z)`` is a standard normal.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn_core import (
    DenseNet,
    backward_layers,
    forward_layers,
    ShapeError,
    load_snapshot,
    log_softmax,
    save_snapshot,
    sigmoid,
    softmax,
    softplus,
)

SIGMA_FLOOR = 1e-6
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def _mlp(n_in, hidden, n_out, rng):
    hidden = [h for h in hidden if h]
    sizes = [n_in, *hidden, n_out]
    acts = ["relu"] * len(hidden) + ["identity"]
    return DenseNet(sizes, acts, rng)


class VaeModel:
    """Parameters and shapes of the M2 model.

    ``hidden`` gives the hidden widths of each of the three networks; an empty
    tuple makes them single affine maps (handy for gradient checks).
    """

    def __init__(
        self,
        x_dim: int,
        n_classes: int,
        latent_dim: int = 8,
        hidden=(64,),
        n_gaussian: int = 13,
        alpha: float = 1.0,
        rng=None,
    ):
        if n_classes < 1 or latent_dim < 1 or x_dim < 1:
            raise ValueError("x_dim, n_classes and latent_dim must be positive")
        if not 0 <= n_gaussian <= x_dim:
            raise ValueError("n_gaussian must lie in [0, x_dim]")
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.x_dim = int(x_dim)
        self.n_classes = int(n_classes)
        self.latent_dim = int(latent_dim)
        self.n_gaussian = int(n_gaussian)
        self.alpha = float(alpha)
        hidden = tuple(hidden)
        self.encoder_y = _mlp(x_dim, hidden, n_classes, rng)
        self.encoder_z = _mlp(x_dim + n_classes, hidden, 2 * latent_dim, rng)
        self.decoder = _mlp(n_classes + latent_dim, hidden, x_dim, rng)

    @classmethod
    def from_nets(cls, encoder_y, encoder_z, decoder, n_gaussian, alpha):
        model = cls.__new__(cls)
        model.encoder_y, model.encoder_z, model.decoder = encoder_y, encoder_z, decoder
        model.x_dim = encoder_y.input_dim
        model.n_classes = encoder_y.output_dim
        model.latent_dim = encoder_z.output_dim // 2
        model.n_gaussian = int(n_gaussian)
        model.alpha = float(alpha)
        if encoder_z.input_dim != model.x_dim + model.n_classes or encoder_z.output_dim % 2:
            raise ShapeError("encoder_z does not match x_dim + n_classes -> 2 * latent_dim")
        if decoder.input_dim != model.n_classes + model.latent_dim or decoder.output_dim != model.x_dim:
            raise ShapeError("decoder does not match n_classes + latent_dim -> x_dim")
        return model

    def nets(self):
        return [self.encoder_y, self.encoder_z, self.decoder]

    def params(self):
        return self.encoder_y.params() + self.encoder_z.params() + self.decoder.params()

    @property
    def n_params(self):
        return sum(net.n_params for net in self.nets())

    def hidden(self, x):
        """First hidden layer of the classifier (the representation the Q-head reuses)."""
        x = self._check_x(x)
        layer = self.encoder_y.layers[0]
        return np.maximum(x @ layer.weight + layer.bias, 0.0)

    def _check_x(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.x_dim or x.ndim not in (1, 2):
            raise ShapeError(f"expected feature vectors of length {self.x_dim}, got shape {x.shape}")
        return x


@dataclass
class ElboReport:
    labeled_bound: float
    unlabeled_bound: float
    classification_loss: float
    total: float


def _onehot(y, k):
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def _check_labels(model, y):
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= model.n_classes):
        raise ValueError(f"class index outside 0..{model.n_classes - 1}")
    return y.astype(int)


def classify(model: VaeModel, x) -> np.ndarray:
    """Class posterior q(y|x); rows sum to one."""
    x = model._check_x(x)
    return softmax(model.encoder_y.forward(x, cache=False))


def encode_z(model: VaeModel, x, y):
    """Mean and standard deviation of q(z|x, y)."""
    x = model._check_x(x)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    yb = _check_labels(model, np.atleast_1d(y))
    if len(yb) != len(xb):
        raise ShapeError("need one class index per input row")
    out = model.encoder_z.forward(np.hstack([xb, _onehot(yb, model.n_classes)]), cache=False)
    d = model.latent_dim
    mu, sigma = out[:, :d], softplus(out[:, d:]) + SIGMA_FLOOR
    return (mu[0], sigma[0]) if single else (mu, sigma)


def reparameterize(mu, sigma, noise):
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    return np.asarray(mu, dtype=np.float64) + sigma * np.asarray(noise, dtype=np.float64)


def kl_gaussian(mu, sigma) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)) summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    val = 0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma), axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def _bernoulli_parts(logits):
    # softplus and sigmoid sharing one exp
    e = np.exp(-np.abs(logits))
    sp = np.maximum(logits, 0.0) + np.log1p(e)
    sig = np.where(logits >= 0, 1.0, e) / (1.0 + e)
    return sp, sig


def reconstruction_nll(outputs, x, n_gaussian):
    """Negative log-likelihood of ``x`` under decoder outputs, summed over the last axis."""
    g = n_gaussian
    diff = x[..., :g] - outputs[..., :g]
    gauss = 0.5 * np.sum(diff * diff, axis=-1) + g * _HALF_LOG_2PI
    logits = outputs[..., g:]
    bern = np.sum(softplus(logits) - x[..., g:] * logits, axis=-1)
    return gauss + bern


def _nll_and_grad(outputs, x, n_gaussian):
    g = n_gaussian
    diff = outputs[..., :g] - x[..., :g]
    logits = outputs[..., g:]
    sp, sig = _bernoulli_parts(logits)
    nll = (
        0.5 * np.sum(diff * diff, axis=-1)
        + g * _HALF_LOG_2PI
        + np.sum(sp - x[..., g:] * logits, axis=-1)
    )
    grad = np.concatenate([diff, sig - x[..., g:]], axis=-1)
    return nll, grad


def _scatter_classes(ga, y_lab, nl, nu, k):
    out = np.zeros((k, ga.shape[1]))
    if nl:
        np.add.at(out, y_lab, ga[:nl])
    if nu:
        out += ga[nl:].reshape(nu, k, -1).sum(axis=0)
    return out


def _elbo_rows(model, x_lab, y_lab, e_lab, x_unl, e_unl, w_lab=None, w_unl=None):
    """L(x, y) for labeled rows and for every class of every unlabeled row.

    Returns ``(L_lab (nl,), L_unl (nu, K), grads)``. With weights, ``grads``
    is the gradient of ``sum(w_lab * L_lab) + sum(w_unl * L_unl)`` w.r.t. the
    encoder_z and decoder parameters; otherwise it is None. The one-hot class
    input is handled as a row lookup and each unlabeled input is multiplied
    once, not once per class.
    """
    k, d, D = model.n_classes, model.latent_dim, model.x_dim
    nl, nu = len(x_lab), len(x_unl)
    y_all = np.concatenate([y_lab, np.tile(np.arange(k), nu)]).astype(int)

    enc_layers = model.encoder_z.layers
    w0 = enc_layers[0].weight
    xw = np.vstack([x_lab @ w0[:D], np.repeat(x_unl @ w0[:D], k, axis=0)])
    out, enc_trace = forward_layers(enc_layers, None, xw + w0[D:][y_all] + enc_layers[0].bias)
    mu, s = out[:, :d], out[:, d:]
    sigma = softplus(s) + SIGMA_FLOOR
    noise = np.vstack([e_lab, np.repeat(e_unl, k, axis=0)])
    z = mu + sigma * noise

    dec_layers = model.decoder.layers
    v0 = dec_layers[0].weight
    recon, dec_trace = forward_layers(dec_layers, None, z @ v0[k:] + v0[:k][y_all] + dec_layers[0].bias)

    nll_l, g_l = _nll_and_grad(recon[:nl], x_lab, model.n_gaussian)
    nll_u, g_u = _nll_and_grad(recon[nl:].reshape(nu, k, D), x_unl[:, None, :], model.n_gaussian)
    kl = 0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma), axis=1)
    log_k = np.log(k)
    big_l_lab = nll_l + kl[:nl] + log_k
    big_l_unl = nll_u + kl[nl:].reshape(nu, k) + log_k
    if w_lab is None and w_unl is None:
        return big_l_lab, big_l_unl, None

    w_lab = np.ones(nl) if w_lab is None else np.asarray(w_lab, dtype=np.float64)
    w_unl = np.zeros((nu, k)) if w_unl is None else np.asarray(w_unl, dtype=np.float64)
    w = np.concatenate([w_lab, w_unl.reshape(-1)])[:, None]
    grad_recon = w * np.vstack([g_l, g_u.reshape(nu * k, D)])
    dec_grads, ga_dec = backward_layers(dec_layers, dec_trace, grad_recon)
    dec_w0 = np.vstack([_scatter_classes(ga_dec, y_lab, nl, nu, k), z.T @ ga_dec])
    dz = ga_dec @ v0[k:].T

    dmu = dz + w * mu
    dsigma = dz * noise + w * (sigma - 1.0 / sigma)
    enc_grads, ga_enc = backward_layers(enc_layers, enc_trace, np.hstack([dmu, dsigma * sigmoid(s)]))
    dwx = x_lab.T @ ga_enc[:nl]
    if nu:
        dwx = dwx + x_unl.T @ ga_enc[nl:].reshape(nu, k, -1).sum(axis=1)
    enc_w0 = np.vstack([dwx, _scatter_classes(ga_enc, y_lab, nl, nu, k)])

    enc_grads[0] = (enc_w0, enc_grads[0][1])
    dec_grads[0] = (dec_w0, dec_grads[0][1])
    flat = [g for pair in enc_grads + dec_grads for g in pair]
    return big_l_lab, big_l_unl, flat


def _prep(model, x, noise):
    x = model._check_x(x)
    x = x[None, :] if x.ndim == 1 else x
    noise = np.asarray(noise, dtype=np.float64).reshape(len(x), model.latent_dim)
    return x, noise


def _empty(model):
    return np.empty((0, model.x_dim)), np.empty(0, dtype=int), np.empty((0, model.latent_dim))


def labeled_loss(model: VaeModel, x, y, noise) -> float:
    """L(x, y) = recon NLL + KL(q(z|x,y) || N(0,I)) - log p(y), summed over rows."""
    x, noise = _prep(model, x, noise)
    y = _check_labels(model, np.atleast_1d(y))
    if len(y) != len(x):
        raise ShapeError("need one class index per input row")
    ex, _, ee = _empty(model)
    return float(_elbo_rows(model, x, y, noise, ex, ee)[0].sum())


def unlabeled_loss(model: VaeModel, x, noise) -> float:
    """U(x) = sum_y q(y|x) L(x, y) - H(q(y|x)), summed over rows.

    The same noise draw for a row is shared across all classes.
    """
    x, noise = _prep(model, x, noise)
    return float(unlabeled_rows(model, x, noise).sum())


def unlabeled_rows(model, x, noise):
    logq = log_softmax(model.encoder_y.forward(x, cache=False))
    ex, ey, ee = _empty(model)
    _, big_l, _ = _elbo_rows(model, ex, ey, ee, x, noise)
    return np.sum(np.exp(logq) * (big_l + logq), axis=1)


def entropy(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * np.log(q), 0.0)
    return -terms.sum(axis=-1)


def objective(model: VaeModel, x_lab, y_lab, x_unl, noise_lab, noise_unl, alpha=None):
    """J^alpha over one minibatch and its gradient w.r.t. ``model.params()``.

    Returns ``(ElboReport, grads)``.
    """
    alpha = model.alpha if alpha is None else float(alpha)
    k, d = model.n_classes, model.latent_dim
    x_lab = np.asarray(x_lab, dtype=np.float64).reshape(-1, model.x_dim)
    x_unl = np.asarray(x_unl, dtype=np.float64).reshape(-1, model.x_dim)
    y_lab = _check_labels(model, np.asarray(y_lab).reshape(-1))
    nl, nu = len(x_lab), len(x_unl)
    if nl + nu == 0:
        raise ValueError("objective needs at least one labeled or unlabeled example")
    if len(y_lab) != nl:
        raise ShapeError("need one label per labeled row")
    noise_lab = np.asarray(noise_lab, dtype=np.float64).reshape(nl, d)
    noise_unl = np.asarray(noise_unl, dtype=np.float64).reshape(nu, d)

    logits = model.encoder_y.forward(np.vstack([x_lab, x_unl]))
    logq = log_softmax(logits)
    q = np.exp(logq)
    q_u, logq_u = q[nl:], logq[nl:]

    big_l_lab, big_l, core_grads = _elbo_rows(
        model, x_lab, y_lab, noise_lab, x_unl, noise_unl, np.ones(nl), q_u
    )
    labeled_total = float(big_l_lab.sum())
    unlabeled_total = float(np.sum(q_u * (big_l + logq_u)))
    class_total = float(-logq[np.arange(nl), y_lab].sum()) if nl else 0.0

    dlogits = np.zeros_like(logits)
    if nl:
        dlogits[:nl] = alpha * (q[:nl] - _onehot(y_lab, k))
    if nu:
        c = big_l + logq_u
        dlogits[nl:] = q_u * (c - np.sum(q_u * c, axis=1, keepdims=True))
    enc_y = model.encoder_y.backward(dlogits)

    report = ElboReport(
        labeled_bound=labeled_total,
        unlabeled_bound=unlabeled_total,
        classification_loss=class_total,
        total=labeled_total + unlabeled_total + alpha * class_total,
    )
    return report, enc_y.params + core_grads


def objective_step(model: VaeModel, labeled_batch, unlabeled_batch, opt, rng) -> ElboReport:
    """One optimiser step on J^alpha.

    ``labeled_batch`` is ``(x, y)`` (or None), ``unlabeled_batch`` an array of
    rows (or None). One latent noise draw per row comes from ``rng``.
    """
    if labeled_batch is None:
        x_lab, y_lab = np.empty((0, model.x_dim)), np.empty(0, dtype=int)
    else:
        x_lab, y_lab = labeled_batch
    x_unl = np.empty((0, model.x_dim)) if unlabeled_batch is None else unlabeled_batch
    x_lab = np.asarray(x_lab, dtype=np.float64).reshape(-1, model.x_dim)
    x_unl = np.asarray(x_unl, dtype=np.float64).reshape(-1, model.x_dim)
    if len(x_lab) + len(x_unl) == 0:
        raise ValueError("both batches are empty")
    noise_lab = rng.standard_normal((len(x_lab), model.latent_dim))
    noise_unl = rng.standard_normal((len(x_unl), model.latent_dim))
    report, grads = objective(model, x_lab, y_lab, x_unl, noise_lab, noise_unl)
    opt.step(model.params(), grads)
    return report


def fit(model: VaeModel, x_lab, y_lab, x_unl, epochs: int, opt, rng, batch_size: int = 64):
    """Minibatch training on J^alpha; returns one summed ElboReport per epoch."""
    x_lab = np.asarray(x_lab, dtype=np.float64).reshape(-1, model.x_dim)
    y_lab = np.asarray(y_lab, dtype=int).reshape(-1)
    x_unl = np.asarray(x_unl, dtype=np.float64).reshape(-1, model.x_dim)
    nl, nu = len(x_lab), len(x_unl)
    if nl + nu == 0:
        raise ValueError("no training data")
    n_batches = max(1, int(np.ceil((nl + nu) / batch_size)))
    history = []
    for _ in range(epochs):
        lab_chunks = np.array_split(rng.permutation(nl), n_batches)
        unl_chunks = np.array_split(rng.permutation(nu), n_batches)
        totals = np.zeros(4)
        for li, ui in zip(lab_chunks, unl_chunks):
            if len(li) + len(ui) == 0:
                continue
            rep = objective_step(model, (x_lab[li], y_lab[li]), x_unl[ui], opt, rng)
            totals += (rep.labeled_bound, rep.unlabeled_bound, rep.classification_loss, rep.total)
        history.append(ElboReport(*totals))
    return history


def m1_loss(encoder: DenseNet, decoder: DenseNet, x, noise, n_gaussian: int) -> float:
    """Negated M1 bound: reconstruction NLL + KL(q(z|x) || N(0, I)), summed over rows.

    ``encoder`` maps x to ``[mu, s]`` (sigma = softplus(s) + floor) and
    ``decoder`` maps z back to feature outputs.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = encoder.output_dim // 2
    out = encoder.forward(x, cache=False)
    mu, sigma = out[:, :d], softplus(out[:, d:]) + SIGMA_FLOOR
    z = reparameterize(mu, sigma, np.asarray(noise).reshape(len(x), d))
    recon = decoder.forward(z, cache=False)
    return float(np.sum(reconstruction_nll(recon, x, n_gaussian) + kl_gaussian(mu, sigma)))


def save_vae(directory, model: VaeModel) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "vae_header.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"n_classes = {model.n_classes}\n")
        fh.write(f"latent_dim = {model.latent_dim}\n")
        fh.write(f"alpha = {model.alpha!r}\n")
        fh.write(f"n_gaussian = {model.n_gaussian}\n")
    for name in ("encoder_y", "encoder_z", "decoder"):
        save_snapshot(os.path.join(directory, f"{name}.bdrl"), getattr(model, name))


def load_vae(directory) -> VaeModel:
    header = {}
    with open(os.path.join(directory, "vae_header.txt"), encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                key, value = line.split("=", 1)
                header[key.strip()] = value.strip()
    nets = [load_snapshot(os.path.join(directory, f"{n}.bdrl")) for n in ("encoder_y", "encoder_z", "decoder")]
    model = VaeModel.from_nets(*nets, n_gaussian=int(header["n_gaussian"]), alpha=float(header["alpha"]))
    if model.n_classes != int(header["n_classes"]) or model.latent_dim != int(header["latent_dim"]):
        raise ValueError(f"{directory}: header disagrees with stored networks")
    return model
