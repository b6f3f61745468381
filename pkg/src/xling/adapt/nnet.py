"""Acoustic network: TDNN and LSTMP hidden layers with a softmax output,
frame-level cross-entropy training, weight transfer and checkpoints"""

import copy
import json
import logging
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import get_rng
from .features import FeatureMatrix

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"XLAM"
CHECKPOINT_VERSION = 1
_CHECKPOINT_PREFIX = struct.Struct("<4sHII")

TDNN = "tdnn"
LSTMP = "lstmp"
FULL_LAYER_ORDER = "TTTLTTLTTL"


class ModelError(Exception):
    pass


class TrainingError(ModelError):
    pass


class CheckpointError(ModelError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """Hidden layer description. For TDNN layers dim is the output dimension
    and offsets the spliced frame offsets; for LSTMP layers dim is the cell
    dimension and projection_dim the recurrent output dimension.
    """

    kind: str
    dim: int
    offsets: Tuple[int, ...] = (0,)
    projection_dim: int = 0
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "offsets", tuple(int(o) for o in self.offsets))
        if self.kind not in (TDNN, LSTMP):
            raise ModelError(f"Unknown layer kind {self.kind}!")
        if self.dim < 1:
            raise ModelError(f"Layer dimension {self.dim} must be positive!")
        if self.kind == TDNN:
            if not self.offsets:
                raise ModelError("TDNN layer needs at least one offset!")
            if list(self.offsets) != sorted(set(self.offsets)):
                raise ModelError(
                    f"TDNN offsets {self.offsets} must be sorted and distinct!"
                )
            if self.activation not in ("relu", "tanh"):
                raise ModelError(f"Unknown activation {self.activation}!")
        elif self.projection_dim < 1:
            raise ModelError(
                f"LSTMP projection dimension {self.projection_dim} must be positive!"
            )

    @classmethod
    def tdnn(
        cls, dim: int, offsets: Sequence[int] = (-1, 0, 1), activation: str = "relu"
    ) -> "LayerSpec":
        return cls(TDNN, dim, tuple(offsets), 0, activation)

    @classmethod
    def lstmp(cls, cell_dim: int, projection_dim: int) -> "LayerSpec":
        return cls(LSTMP, cell_dim, (0,), projection_dim)

    @property
    def output_dim(self) -> int:
        if self.kind == TDNN:
            return self.dim
        return self.projection_dim

    def to_dict(self) -> Dict:
        result = asdict(self)
        result["offsets"] = list(self.offsets)
        return result

    @classmethod
    def from_dict(cls, data: Dict) -> "LayerSpec":
        return cls(
            data["kind"],
            int(data["dim"]),
            tuple(data.get("offsets", (0,))),
            int(data.get("projection_dim", 0)),
            data.get("activation", "relu"),
        )


def layers_from_pattern(
    pattern: str,
    tdnn_dim: int,
    cell_dim: int,
    projection_dim: int,
    activation: str = "relu",
) -> List[LayerSpec]:
    """
    Build hidden layers from a pattern such as "TTTLTTLTTL" (T: TDNN, L:
    LSTMP). TDNN layers before the first LSTMP splice offsets -1..1 (the
    very first layer only its own frame), later ones -3, 0 and 3.

    Args:
        pattern (str): Layer order
        tdnn_dim (int): TDNN output dimension
        cell_dim (int): LSTMP cell dimension
        projection_dim (int): LSTMP projection dimension
        activation (str): TDNN nonlinearity. Defaults to "relu".

    Returns:
        List[LayerSpec]: Layer specifications
    """
    layers = []
    seen_lstmp = False
    for position, symbol in enumerate(pattern.upper()):
        if symbol == "T":
            if position == 0:
                offsets = (0,)
            elif seen_lstmp:
                offsets = (-3, 0, 3)
            else:
                offsets = (-1, 0, 1)
            layers.append(LayerSpec.tdnn(tdnn_dim, offsets, activation))
        elif symbol == "L":
            seen_lstmp = True
            layers.append(LayerSpec.lstmp(cell_dim, projection_dim))
        else:
            raise ModelError(f"Unknown layer symbol {symbol} in {pattern}!")
    if not layers:
        raise ModelError("Layer pattern is empty!")
    return layers


def full_scale_layers(pattern: str = FULL_LAYER_ORDER) -> List[LayerSpec]:
    """Seven 1024-dim TDNN and three LSTMP (cell 1024, projection 256) layers"""
    return layers_from_pattern(pattern, 1024, 1024, 256)


def desk_scale_layers(pattern: str = "TTL") -> List[LayerSpec]:
    """Two 64-dim TDNN and one LSTMP (cell 64, projection 32) layer"""
    return layers_from_pattern(pattern, 64, 64, 32)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class TdnnLayer:
    """Affine map of spliced frames followed by a nonlinearity. Offsets
    beyond the sequence edges repeat the edge frame.
    """

    def __init__(self, spec: LayerSpec, input_dim: int) -> None:
        self.spec = spec
        self.input_dim = input_dim
        spliced = len(spec.offsets) * input_dim
        self.params = {
            "W": np.zeros((spec.dim, spliced)),
            "b": np.zeros(spec.dim),
        }

    def initialise(self, rng: np.random.Generator) -> None:
        fan_in = self.params["W"].shape[1]
        self.params["W"] = rng.standard_normal(self.params["W"].shape) / np.sqrt(
            fan_in
        )
        self.params["b"] = np.zeros(self.spec.dim)

    def _index(self, frames: int) -> np.ndarray:
        offsets = np.asarray(self.spec.offsets)
        return np.clip(np.arange(frames)[:, None] + offsets[None, :], 0, frames - 1)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Dict]:
        batch, frames, _ = x.shape
        index = self._index(frames)
        spliced = x[:, index, :].reshape(batch, frames, -1)
        z = spliced @ self.params["W"].T + self.params["b"]
        if self.spec.activation == "relu":
            y = np.maximum(z, 0.0)
        else:
            y = np.tanh(z)
        return y, {"index": index, "spliced": spliced, "z": z, "y": y}

    def backward(
        self, dy: np.ndarray, cache: Dict
    ) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        if self.spec.activation == "relu":
            dz = dy * (cache["z"] > 0)
        else:
            dz = dy * (1.0 - cache["y"] ** 2)
        batch, frames, _ = dz.shape
        flat_dz = dz.reshape(-1, self.spec.dim)
        spliced = cache["spliced"]
        grads = {
            "W": flat_dz.T @ spliced.reshape(batch * frames, -1),
            "b": flat_dz.sum(axis=0),
        }
        dspliced = (dz @ self.params["W"]).reshape(
            batch, frames, len(self.spec.offsets), self.input_dim
        )
        dx = np.zeros((batch, frames, self.input_dim))
        index = cache["index"]
        for k in range(len(self.spec.offsets)):
            np.add.at(dx, (slice(None), index[:, k]), dspliced[:, :, k, :])
        return dx, grads


class LstmpLayer:
    """Unidirectional LSTM with forget gate, peephole connections and a
    linear projection of the recurrent output. Gate blocks are stacked in
    the order input, forget, candidate, output.
    """

    def __init__(self, spec: LayerSpec, input_dim: int) -> None:
        self.spec = spec
        self.input_dim = input_dim
        cell, projection = spec.dim, spec.projection_dim
        self.params = {
            "Wx": np.zeros((4 * cell, input_dim)),
            "Wr": np.zeros((4 * cell, projection)),
            "b": np.zeros(4 * cell),
            "p_i": np.zeros(cell),
            "p_f": np.zeros(cell),
            "p_o": np.zeros(cell),
            "Wp": np.zeros((projection, cell)),
        }

    def initialise(self, rng: np.random.Generator) -> None:
        cell, projection = self.spec.dim, self.spec.projection_dim
        self.params["Wx"] = rng.standard_normal((4 * cell, self.input_dim)) / np.sqrt(
            self.input_dim
        )
        self.params["Wr"] = rng.standard_normal((4 * cell, projection)) / np.sqrt(
            projection
        )
        bias = np.zeros(4 * cell)
        bias[cell : 2 * cell] = 1.0
        self.params["b"] = bias
        for name in ("p_i", "p_f", "p_o"):
            self.params[name] = rng.uniform(-0.1, 0.1, cell)
        self.params["Wp"] = rng.standard_normal((projection, cell)) / np.sqrt(cell)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Dict]:
        p = self.params
        cell = self.spec.dim
        batch, frames, _ = x.shape
        xw = x @ p["Wx"].T + p["b"]
        c = np.zeros((batch, frames + 1, cell))
        r = np.zeros((batch, frames + 1, self.spec.projection_dim))
        gates = {name: np.zeros((batch, frames, cell)) for name in "ifgoh"}
        for t in range(frames):
            c_prev = c[:, t]
            a = xw[:, t] + r[:, t] @ p["Wr"].T
            i = _sigmoid(a[:, :cell] + p["p_i"] * c_prev)
            f = _sigmoid(a[:, cell : 2 * cell] + p["p_f"] * c_prev)
            g = np.tanh(a[:, 2 * cell : 3 * cell])
            c_t = f * c_prev + i * g
            o = _sigmoid(a[:, 3 * cell :] + p["p_o"] * c_t)
            h = np.tanh(c_t)
            c[:, t + 1] = c_t
            r[:, t + 1] = (o * h) @ p["Wp"].T
            for name, value in zip("ifgoh", (i, f, g, o, h)):
                gates[name][:, t] = value
        return r[:, 1:].copy(), {"x": x, "c": c, "r": r, **gates}

    def backward(
        self, dy: np.ndarray, cache: Dict
    ) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        p = self.params
        cell = self.spec.dim
        batch, frames, _ = dy.shape
        i, f, g, o, h = (cache[name] for name in "ifgoh")
        c, r = cache["c"], cache["r"]
        da = np.zeros((batch, frames, 4 * cell))
        grads = {name: np.zeros_like(value) for name, value in p.items()}
        dr_next = np.zeros((batch, self.spec.projection_dim))
        dc_next = np.zeros((batch, cell))
        for t in reversed(range(frames)):
            c_prev, c_t = c[:, t], c[:, t + 1]
            dr = dy[:, t] + dr_next
            m = o[:, t] * h[:, t]
            grads["Wp"] += dr.T @ m
            dm = dr @ p["Wp"]
            dao = dm * h[:, t] * o[:, t] * (1.0 - o[:, t])
            dc = (
                dc_next
                + dm * o[:, t] * (1.0 - h[:, t] ** 2)
                + dao * p["p_o"]
            )
            dag = dc * i[:, t] * (1.0 - g[:, t] ** 2)
            dai = dc * g[:, t] * i[:, t] * (1.0 - i[:, t])
            daf = dc * c_prev * f[:, t] * (1.0 - f[:, t])
            grads["p_o"] += np.sum(dao * c_t, axis=0)
            grads["p_i"] += np.sum(dai * c_prev, axis=0)
            grads["p_f"] += np.sum(daf * c_prev, axis=0)
            da_t = np.concatenate([dai, daf, dag, dao], axis=1)
            da[:, t] = da_t
            dr_next = da_t @ p["Wr"]
            dc_next = dc * f[:, t] + dai * p["p_i"] + daf * p["p_f"]
        flat_da = da.reshape(-1, 4 * cell)
        grads["Wx"] = flat_da.T @ cache["x"].reshape(batch * frames, -1)
        grads["Wr"] = flat_da.T @ r[:, :-1].reshape(batch * frames, -1)
        grads["b"] = flat_da.sum(axis=0)
        return da @ p["Wx"], grads


def _make_layer(spec: LayerSpec, input_dim: int) -> Union[TdnnLayer, LstmpLayer]:
    if spec.kind == TDNN:
        return TdnnLayer(spec, input_dim)
    return LstmpLayer(spec, input_dim)


class AcousticModel:
    """Hidden TDNN/LSTMP stack with an affine softmax output layer over a
    phone set. Inputs are normalised with a fixed shift and scale that
    belong to the model.

    Args:
        input_dim (int): Input dimension
        specs (Sequence[LayerSpec]): Hidden layer specifications
        phone_set (Sequence[str]): Output phone symbols
        fingerprint (str): Fingerprint of the speaker embedding extractor
        input_shift (Optional[np.ndarray]): Input mean. Defaults to None (zeros).
        input_scale (Optional[np.ndarray]): Input standard deviation. Defaults to None (ones).
        dropout_rate (float): Dropout rate of the last training phase. Defaults to 0.
    """

    def __init__(
        self,
        input_dim: int,
        specs: Sequence[LayerSpec],
        phone_set: Sequence[str],
        fingerprint: str,
        input_shift: Optional[np.ndarray] = None,
        input_scale: Optional[np.ndarray] = None,
        dropout_rate: float = 0.0,
    ) -> None:
        if input_dim < 1:
            raise ModelError(f"Input dimension {input_dim} must be positive!")
        if not specs:
            raise ModelError("Model needs at least one hidden layer!")
        self.input_dim = input_dim
        self.phone_set = _check_phone_set(phone_set)
        self.fingerprint = fingerprint
        self.dropout_rate = dropout_rate
        self.training_state: Dict = {}
        self.input_shift = (
            np.zeros(input_dim)
            if input_shift is None
            else np.asarray(input_shift, dtype=np.float64)
        )
        self.input_scale = (
            np.ones(input_dim)
            if input_scale is None
            else np.asarray(input_scale, dtype=np.float64)
        )
        if self.input_shift.shape != (input_dim,) or self.input_scale.shape != (
            input_dim,
        ):
            raise ModelError("Input normalisation does not match input dimension!")
        if np.any(self.input_scale <= 0):
            raise ModelError("Input scale must be positive!")
        self.hidden = []
        dim = input_dim
        for spec in specs:
            self.hidden.append(_make_layer(spec, dim))
            dim = spec.output_dim
        self.output = {
            "W": np.zeros((len(self.phone_set), dim)),
            "b": np.zeros(len(self.phone_set)),
        }

    @property
    def specs(self) -> List[LayerSpec]:
        return [layer.spec for layer in self.hidden]

    @property
    def hidden_dim(self) -> int:
        return self.hidden[-1].spec.output_dim

    @property
    def phone_index(self) -> Dict[str, int]:
        return {phone: index for index, phone in enumerate(self.phone_set)}

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        """
        Trainable parameters in a fixed order

        Returns:
            List[Tuple[str, np.ndarray]]: (name, array) pairs
        """
        result = []
        for number, layer in enumerate(self.hidden):
            for name, value in layer.params.items():
                result.append((f"hidden{number}.{name}", value))
        result.append(("output.W", self.output["W"]))
        result.append(("output.b", self.output["b"]))
        return result

    def hidden_parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [
            (name, value)
            for name, value in self.parameters()
            if name.startswith("hidden")
        ]

    def normalise(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_shift) / self.input_scale

    def _check_inputs(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.input_dim:
            raise ModelError(
                f"Input dimension {x.shape[-1]} does not match model input dimension {self.input_dim}!"
            )

    def run(
        self,
        x: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        dropout_rate: float = 0.0,
    ) -> Tuple[np.ndarray, List[Dict], List[Optional[np.ndarray]]]:
        """
        Forward pass of a batch of shape (batch, frames, input_dim) returning
        the logits with everything backward needs. Inverted dropout is
        applied to every hidden output when a rate and generator are given.
        """
        self._check_inputs(x)
        activation = self.normalise(x)
        caches = []
        masks = []
        for layer in self.hidden:
            activation, cache = layer.forward(activation)
            mask = None
            if dropout_rate > 0 and rng is not None:
                mask = (rng.random(activation.shape) >= dropout_rate) / (
                    1.0 - dropout_rate
                )
                activation = activation * mask
            caches.append(cache)
            masks.append(mask)
        caches.append({"hidden": activation})
        logits = activation @ self.output["W"].T + self.output["b"]
        return logits, caches, masks


def _check_phone_set(phone_set: Sequence[str]) -> Tuple[str, ...]:
    phones = tuple(phone_set)
    if not phones:
        raise ModelError("Phone set is empty!")
    if len(set(phones)) != len(phones):
        raise ModelError("Phone set has duplicate symbols!")
    return phones


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _as_array(inputs: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(inputs, FeatureMatrix):
        return inputs.data
    return np.asarray(inputs, dtype=np.float64)


def init_model(
    input_dim: int,
    specs: Sequence[LayerSpec],
    phone_set: Sequence[str],
    fingerprint: str,
    seed: int = 0,
    input_shift: Optional[np.ndarray] = None,
    input_scale: Optional[np.ndarray] = None,
) -> AcousticModel:
    """
    Create a randomly initialised model

    Args:
        input_dim (int): Input dimension
        specs (Sequence[LayerSpec]): Hidden layer specifications
        phone_set (Sequence[str]): Output phone symbols
        fingerprint (str): Fingerprint of the speaker embedding extractor
        seed (int): Random seed. Defaults to 0.
        input_shift (Optional[np.ndarray]): Input mean. Defaults to None.
        input_scale (Optional[np.ndarray]): Input standard deviation. Defaults to None.

    Returns:
        AcousticModel: New model
    """
    model = AcousticModel(
        input_dim, specs, phone_set, fingerprint, input_shift, input_scale
    )
    rng = get_rng(seed, "init")
    for layer in model.hidden:
        layer.initialise(rng)
    _initialise_output(model, rng)
    return model


def _initialise_output(model: AcousticModel, rng: np.random.Generator) -> None:
    fan_in = model.hidden_dim
    bound = 1.0 / np.sqrt(fan_in)
    model.output = {
        "W": rng.uniform(-bound, bound, (len(model.phone_set), fan_in)),
        "b": np.zeros(len(model.phone_set)),
    }


def forward(
    m: AcousticModel, inputs: Union[FeatureMatrix, np.ndarray]
) -> np.ndarray:
    """
    Per-frame phone posteriors of one utterance

    Args:
        m (AcousticModel): Model
        inputs (Union[FeatureMatrix, np.ndarray]): Inputs of shape (frames, input_dim)

    Returns:
        np.ndarray: Posteriors of shape (frames, len(phone_set))
    """
    x = _as_array(inputs)
    if x.ndim != 2:
        raise ModelError(f"Expected a (frames, dims) matrix, got shape {x.shape}!")
    logits, _, _ = m.run(x[None, :, :])
    return np.exp(_log_softmax(logits[0]))


def _batch_loss_and_grads(
    m: AcousticModel,
    x: np.ndarray,
    y: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    dropout_rate: float = 0.0,
) -> Tuple[float, Dict[str, np.ndarray]]:
    logits, caches, masks = m.run(x, rng, dropout_rate)
    batch, frames, phones = logits.shape
    no_frames = batch * frames
    log_probs = _log_softmax(logits).reshape(no_frames, phones)
    targets = y.reshape(no_frames)
    loss = -float(np.mean(log_probs[np.arange(no_frames), targets]))
    dlogits = np.exp(log_probs)
    dlogits[np.arange(no_frames), targets] -= 1.0
    dlogits /= no_frames
    hidden = caches[-1]["hidden"].reshape(no_frames, -1)
    grads = {
        "output.W": dlogits.T @ hidden,
        "output.b": dlogits.sum(axis=0),
    }
    dh = (dlogits @ m.output["W"]).reshape(batch, frames, -1)
    for number in reversed(range(len(m.hidden))):
        if masks[number] is not None:
            dh = dh * masks[number]
        dh, layer_grads = m.hidden[number].backward(dh, caches[number])
        for name, value in layer_grads.items():
            grads[f"hidden{number}.{name}"] = value
    return loss, grads


def _label_indices(m: AcousticModel, labels: Sequence) -> np.ndarray:
    index = m.phone_index
    result = np.zeros(len(labels), dtype=np.int64)
    for position, label in enumerate(labels):
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < len(m.phone_set):
                raise ModelError(f"Label index {label} outside phone set!")
            result[position] = label
        else:
            value = index.get(label)
            if value is None:
                raise ModelError(f"Label {label} not in phone set!")
            result[position] = value
    return result


def loss_and_grads(
    m: AcousticModel,
    inputs: Union[FeatureMatrix, np.ndarray],
    labels: Sequence,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean frame cross-entropy of one utterance and its gradients with respect
    to every parameter, back-propagated through time over the whole
    utterance

    Args:
        m (AcousticModel): Model
        inputs (Union[FeatureMatrix, np.ndarray]): Inputs of shape (frames, input_dim)
        labels (Sequence): Phone symbol or index per frame

    Returns:
        Tuple[float, Dict[str, np.ndarray]]: Loss and gradients keyed like AcousticModel.parameters()
    """
    x = _as_array(inputs)
    if len(labels) != len(x):
        raise ModelError(
            f"{len(labels)} labels given for {len(x)} frames!"
        )
    y = _label_indices(m, labels)
    return _batch_loss_and_grads(m, x[None, :, :], y[None, :])


def gradient_check(
    m: AcousticModel,
    inputs: Union[FeatureMatrix, np.ndarray],
    labels: Sequence,
    step: float = 1e-4,
    floor: float = 1e-3,
) -> Dict[str, float]:
    """
    Compare analytic gradients with central finite differences for every
    entry of every parameter. The relative error of an entry is
    |a - n| / max(|a|, |n|, floor).

    Args:
        m (AcousticModel): Model, left unchanged
        inputs (Union[FeatureMatrix, np.ndarray]): Inputs
        labels (Sequence): Frame labels
        step (float): Finite difference step. Defaults to 1e-4.
        floor (float): Denominator floor. Defaults to 1e-3.

    Returns:
        Dict[str, float]: Largest relative error per parameter
    """
    _, analytic = loss_and_grads(m, inputs, labels)
    result = {}
    for name, value in m.parameters():
        flat = value.reshape(-1)
        numeric = np.zeros_like(flat)
        for position in range(len(flat)):
            original = flat[position]
            flat[position] = original + step
            plus, _ = loss_and_grads(m, inputs, labels)
            flat[position] = original - step
            minus, _ = loss_and_grads(m, inputs, labels)
            flat[position] = original
            numeric[position] = (plus - minus) / (2 * step)
        exact = analytic[name].reshape(-1)
        denominator = np.maximum(
            np.maximum(np.abs(exact), np.abs(numeric)), floor
        )
        result[name] = float(np.max(np.abs(exact - numeric) / denominator))
    return result


@dataclass(frozen=True)
class TrainConfig:
    """SGD training configuration

    Args:
        initial_lr (float): Learning rate of the first step
        final_lr (float): Learning rate of the last step
        epochs (int): Passes over the data
        batch (int): Chunks per step. Defaults to 16.
        bptt_chunk (int): Chunk length in frames. Defaults to 50.
        seed (int): Seed of shuffling and dropout. Defaults to 0.
        dropout_rate (float): Dropout rate. Defaults to 0.
        max_grad_norm (Optional[float]): Gradient norm clipping threshold. Defaults to None.
    """

    initial_lr: float
    final_lr: float
    epochs: int
    batch: int = 16
    bptt_chunk: int = 50
    seed: int = 0
    dropout_rate: float = 0.0
    max_grad_norm: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.initial_lr > 0 and self.final_lr > 0):
            raise ModelError("Learning rates must be positive!")
        if self.final_lr > self.initial_lr:
            raise ModelError(
                f"Final learning rate {self.final_lr} exceeds initial {self.initial_lr}!"
            )
        if self.epochs < 1:
            raise ModelError(f"Epochs {self.epochs} must be at least 1!")
        if self.batch < 1 or self.bptt_chunk < 1:
            raise ModelError("Batch size and chunk length must be positive!")
        if not 0 <= self.dropout_rate < 1:
            raise ModelError(f"Dropout rate {self.dropout_rate} outside [0, 1)!")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        return cls(**data)


def lr_schedule(cfg: TrainConfig, steps: int) -> np.ndarray:
    """
    Learning rates of an exponential decay from initial_lr at the first step
    to final_lr at the last

    Args:
        cfg (TrainConfig): Training configuration
        steps (int): Number of steps

    Returns:
        np.ndarray: Learning rate per step
    """
    if steps == 1:
        return np.array([cfg.initial_lr])
    ratio = cfg.final_lr / cfg.initial_lr
    rates = cfg.initial_lr * ratio ** (np.arange(steps) / (steps - 1))
    rates[-1] = cfg.final_lr
    return rates


@dataclass
class TrainingExample:
    """One featurized utterance: network inputs and the frame labels"""

    utterance_id: str
    inputs: np.ndarray
    labels: Sequence[str]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    first_lr: float
    last_lr: float
    steps: int


@dataclass
class TrainingLog:
    """Per-epoch loss and learning rate of a training run"""

    initial_lr: float
    final_lr: float
    dropout_rate: float
    epochs: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [record.loss for record in self.epochs]

    @property
    def first_lr(self) -> float:
        return self.epochs[0].first_lr

    @property
    def last_lr(self) -> float:
        return self.epochs[-1].last_lr

    def to_dict(self) -> Dict:
        return {
            "initial_lr": self.initial_lr,
            "final_lr": self.final_lr,
            "dropout_rate": self.dropout_rate,
            "epochs": [asdict(record) for record in self.epochs],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainingLog":
        return cls(
            data["initial_lr"],
            data["final_lr"],
            data["dropout_rate"],
            [EpochRecord(**record) for record in data["epochs"]],
        )


def _make_chunks(
    examples: Sequence[TrainingExample], chunk: int
) -> Dict[int, List[Tuple[int, int]]]:
    """Equal-length chunks grouped by length: each utterance is cut into
    chunk-frame pieces, the last aligned to its end."""
    buckets: Dict[int, List[Tuple[int, int]]] = {}
    for number, example in enumerate(examples):
        frames = len(example.labels)
        length = min(chunk, frames)
        starts = list(range(0, frames - length + 1, length))
        if starts[-1] + length < frames:
            starts.append(frames - length)
        for start in starts:
            buckets.setdefault(length, []).append((number, start))
    return buckets


def train(
    m: AcousticModel,
    data: Sequence[TrainingExample],
    cfg: TrainConfig,
) -> Tuple[AcousticModel, TrainingLog]:
    """
    Train with plain SGD on frame cross-entropy. Utterances are cut into
    chunks of bptt_chunk frames, batched with chunks of equal length and
    visited in an order fixed by the seed. The learning rate decays
    exponentially from initial_lr to final_lr across all steps.

    Args:
        m (AcousticModel): Model to start from, left unchanged
        data (Sequence[TrainingExample]): Training utterances
        cfg (TrainConfig): Training configuration

    Returns:
        Tuple[AcousticModel, TrainingLog]: Trained model and training log
    """
    if not data:
        raise TrainingError("No training data!")
    model = copy.deepcopy(m)
    model.dropout_rate = cfg.dropout_rate
    inputs = []
    targets = []
    for example in data:
        x = example.inputs
        if isinstance(x, FeatureMatrix):
            x = x.data
        if x.ndim != 2 or x.shape[1] != model.input_dim:
            raise TrainingError(
                f"Inputs of {example.utterance_id} have shape {x.shape}, model expects {model.input_dim} dims!"
            )
        if len(x) == 0:
            raise TrainingError(f"{example.utterance_id} has no frames!")
        if len(example.labels) != len(x):
            raise TrainingError(
                f"{example.utterance_id} has {len(example.labels)} labels for {len(x)} frames!"
            )
        inputs.append(x)
        targets.append(_label_indices(model, example.labels))
    buckets = _make_chunks(data, cfg.bptt_chunk)
    batches_per_epoch = sum(
        -(-len(chunks) // cfg.batch) for chunks in buckets.values()
    )
    rates = lr_schedule(cfg, cfg.epochs * batches_per_epoch)
    log = TrainingLog(cfg.initial_lr, cfg.final_lr, cfg.dropout_rate)
    step = 0
    params = dict(model.parameters())
    for epoch in range(cfg.epochs):
        rng = get_rng(cfg.seed, "epoch", epoch)
        batches = []
        for length in sorted(buckets):
            chunks = buckets[length]
            order = rng.permutation(len(chunks))
            for begin in range(0, len(chunks), cfg.batch):
                batches.append(
                    (length, [chunks[i] for i in order[begin : begin + cfg.batch]])
                )
        batch_order = rng.permutation(len(batches))
        total_loss = 0.0
        total_frames = 0
        first_lr = rates[step]
        for batch_number in batch_order:
            length, chunks = batches[batch_number]
            x = np.stack([inputs[n][s : s + length] for n, s in chunks]).astype(
                np.float64
            )
            y = np.stack([targets[n][s : s + length] for n, s in chunks])
            loss, grads = _batch_loss_and_grads(
                model, x, y, rng, cfg.dropout_rate
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"Loss diverged to {loss} at epoch {epoch}, step {step} (lr {rates[step]})!"
                )
            if cfg.max_grad_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
                if norm > cfg.max_grad_norm:
                    for name in grads:
                        grads[name] = grads[name] * (cfg.max_grad_norm / norm)
            for name, value in params.items():
                value -= rates[step] * grads[name]
            total_loss += loss * y.size
            total_frames += y.size
            step += 1
        record = EpochRecord(
            epoch, total_loss / total_frames, float(first_lr), float(rates[step - 1]), len(batches)
        )
        log.epochs.append(record)
        logger.info(
            f"Epoch {epoch}: loss {record.loss:.4f}, lr {record.first_lr:.3g} to {record.last_lr:.3g}"
        )
    model.training_state = {"epoch": cfg.epochs, "last_lr": float(rates[-1])}
    return model, log


def transfer_hidden(
    source: AcousticModel, new_phone_set: Sequence[str], seed: int = 0
) -> AcousticModel:
    """
    Copy all hidden layers and replace the output layer by a freshly
    initialised one over a new phone set. The extractor fingerprint and the
    input normalisation are copied.

    Args:
        source (AcousticModel): Source model
        new_phone_set (Sequence[str]): Output phone symbols of the new model
        seed (int): Seed of the new output layer. Defaults to 0.

    Returns:
        AcousticModel: New model
    """
    phones = _check_phone_set(new_phone_set)
    target = AcousticModel(
        source.input_dim,
        source.specs,
        phones,
        source.fingerprint,
        source.input_shift.copy(),
        source.input_scale.copy(),
        source.dropout_rate,
    )
    for mine, theirs in zip(target.hidden, source.hidden):
        mine.params = {name: value.copy() for name, value in theirs.params.items()}
    _initialise_output(target, get_rng(seed, "transfer", phones))
    return target


def transfer_full(source: AcousticModel) -> AcousticModel:
    """
    Copy the entire model, output layer included

    Args:
        source (AcousticModel): Source model

    Returns:
        AcousticModel: Identical copy
    """
    return copy.deepcopy(source)


def _arrays(m: AcousticModel) -> List[Tuple[str, np.ndarray]]:
    return [("input.shift", m.input_shift), ("input.scale", m.input_scale)] + list(
        m.parameters()
    )


def save_checkpoint(m: AcousticModel, path: str) -> None:
    """
    Write a checkpoint: magic, format version, CRC32 of the rest, header
    length, a JSON header (phone set, fingerprint, layers, training state,
    array shapes) and the arrays as little-endian float64

    Args:
        m (AcousticModel): Model
        path (str): Output path

    Returns:
        None
    """
    arrays = _arrays(m)
    header = {
        "input_dim": m.input_dim,
        "phone_set": list(m.phone_set),
        "fingerprint": m.fingerprint,
        "dropout_rate": m.dropout_rate,
        "layers": [spec.to_dict() for spec in m.specs],
        "training_state": m.training_state,
        "arrays": [[name, list(value.shape)] for name, value in arrays],
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    payload = encoded + b"".join(
        np.ascontiguousarray(value, dtype="<f8").tobytes() for _, value in arrays
    )
    prefix = _CHECKPOINT_PREFIX.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        zlib.crc32(payload) & 0xFFFFFFFF,
        len(encoded),
    )
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    temporary = f"{path}.tmp"
    with open(temporary, "wb") as fp:
        fp.write(prefix)
        fp.write(payload)
    os.replace(temporary, path)


def _read_prefix(data: bytes, path: str) -> Tuple[int, int]:
    if len(data) < _CHECKPOINT_PREFIX.size:
        raise CheckpointError(f"Checkpoint {path} is truncated!")
    magic, version, checksum, header_length = _CHECKPOINT_PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint!")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has version {version}, expected {CHECKPOINT_VERSION}!"
        )
    return checksum, header_length


def read_checkpoint_header(path: str) -> Dict:
    """
    Read only the JSON header of a checkpoint

    Args:
        path (str): Checkpoint path

    Returns:
        Dict: Header with phone set, fingerprint, layers, training state and array shapes
    """
    with open(path, "rb") as fp:
        prefix = fp.read(_CHECKPOINT_PREFIX.size)
        _, header_length = _read_prefix(prefix, path)
        encoded = fp.read(header_length)
    if len(encoded) != header_length:
        raise CheckpointError(f"Checkpoint {path} is truncated!")
    try:
        return json.loads(encoded.decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"Checkpoint {path} has a corrupt header!") from e


def load_checkpoint(path: str) -> AcousticModel:
    """
    Load a checkpoint written by save_checkpoint

    Args:
        path (str): Checkpoint path

    Returns:
        AcousticModel: Model with bit-identical weights
    """
    with open(path, "rb") as fp:
        data = fp.read()
    checksum, header_length = _read_prefix(data, path)
    payload = data[_CHECKPOINT_PREFIX.size :]
    if zlib.crc32(payload) & 0xFFFFFFFF != checksum:
        raise CheckpointError(f"Checkpoint {path} failed its checksum!")
    header = json.loads(payload[:header_length].decode("utf-8"))
    model = AcousticModel(
        header["input_dim"],
        [LayerSpec.from_dict(spec) for spec in header["layers"]],
        header["phone_set"],
        header["fingerprint"],
        dropout_rate=header["dropout_rate"],
    )
    model.training_state = header["training_state"]
    values = {}
    position = header_length
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        end = position + 8 * count
        if end > len(payload):
            raise CheckpointError(f"Checkpoint {path} is missing array {name}!")
        values[name] = (
            np.frombuffer(payload[position:end], dtype="<f8")
            .astype(np.float64)
            .reshape(shape)
        )
        position = end
    if position != len(payload):
        raise CheckpointError(f"Checkpoint {path} has trailing data!")
    expected = [name for name, _ in _arrays(model)]
    if sorted(values) != sorted(expected):
        raise CheckpointError(f"Checkpoint {path} arrays do not match its layers!")
    model.input_shift = values["input.shift"]
    model.input_scale = values["input.scale"]
    for number, layer in enumerate(model.hidden):
        for name in layer.params:
            layer.params[name] = values[f"hidden{number}.{name}"]
    model.output = {"W": values["output.W"], "b": values["output.b"]}
    return model
