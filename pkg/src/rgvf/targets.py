"""One-step TD targets and the masked answer loss for a question network."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError


@dataclass
class TargetBatch:
    targets: np.ndarray
    mask: np.ndarray


def compute_targets(net, features, next_answers, actions, terminal=False):
    """Bootstrap targets ``y`` and update mask for every prediction node.

    Parameters
    ----------
    net : QuestionNetwork
    features : array of shape (n_f,) or (B, n_f)
        Feature values ``f_{t+1}`` of the transition.
    next_answers : array of shape (n_p,) or (B, n_p)
        Answers ``y_hat_{t+1}`` at the next observation; treated as constants.
    actions : int or array of shape (B,)
        Index into ``net.actions`` of the executed action.
    terminal : bool or array of shape (B,)
        Terminal transitions get all-zero targets and a full mask.
    """
    single = np.ndim(features) == 1
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y_next = np.atleast_2d(np.asarray(next_answers, dtype=np.float64))
    if f.shape[1] != net.n_features:
        raise ShapeError(f"expected {net.n_features} features, got {f.shape[1]}")
    if y_next.shape[1] != net.n_predictions:
        raise ShapeError(f"expected {net.n_predictions} answers, got {y_next.shape[1]}")
    if f.shape[0] != y_next.shape[0]:
        raise ShapeError("features and answers disagree on batch size")
    batch = f.shape[0]
    actions = np.broadcast_to(np.asarray(actions, dtype=np.int64), (batch,))
    terminal = np.broadcast_to(np.asarray(terminal, dtype=bool), (batch,))
    # sparse product: the weight matrices have at most a few entries per row
    targets = np.asarray((net.edge_matrix @ np.hstack([y_next, f]).T).T)
    cond = net.condition_index
    mask = (cond[None, :] < 0) | (cond[None, :] == actions[:, None])
    if terminal.any():
        targets[terminal] = 0.0
        mask[terminal] = True
    if single:
        return TargetBatch(targets[0], mask[0])
    return TargetBatch(targets, mask)


def answer_loss(predictions, batch):
    """Mean squared error over masked-in entries and its gradient w.r.t. ``predictions``."""
    pred = np.asarray(predictions, dtype=np.float64)
    if pred.shape != batch.targets.shape or pred.shape != batch.mask.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {batch.targets.shape}")
    count = int(batch.mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - batch.targets
    diff *= batch.mask
    flat = diff.ravel()
    loss = float(flat @ flat) / count
    diff *= 2.0 / count
    return loss, diff
