"""Joint intent classification and CRF slot filling."""

from dataclasses import dataclass, field

import numpy as np

from xmetra.autodiff import Tensor, add, log_softmax, matmul, mean, nll_pick, slice_axis
from xmetra.exceptions import InputError
from xmetra.models.crf import CrfLayer, viterbi_decode
from xmetra.models.encoder import TokenEncoder


@dataclass(frozen=True)
class EncodedUtterance:
    """Model-ready utterance: ``ids`` starts with CLS; ``slots`` aligns with ``ids[1:]``."""

    ids: np.ndarray
    intent: int
    slots: np.ndarray
    source: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.slots) != len(self.ids) - 1:
            raise InputError(f"{len(self.slots)} slot labels for {len(self.ids) - 1} tokens")


class IntentSlotModel:
    """Intent head on the pooled vector, per-token slot emissions scored by a CRF.

    The model object is stateless; parameters live in a ``{name: Tensor}``
    state so the meta-learner can adapt copies freely.
    """

    family = "mtod"

    def __init__(self, encoder_config, num_intents, num_slot_labels, encoder=None):
        if num_intents < 1 or num_slot_labels < 1:
            raise InputError("need at least one intent and one slot label")
        self.encoder = encoder if encoder is not None else TokenEncoder(encoder_config)
        self.config = encoder_config
        self.num_intents = num_intents
        self.num_slot_labels = num_slot_labels
        self.crf = CrfLayer(num_slot_labels)

    @property
    def head_names(self):
        return ("intent.weight", "intent.bias", "slot.weight", "slot.bias") + self.crf.names

    def init_params(self, rng):
        H = self.config.hidden_dim
        params = self.encoder.init_params(rng)
        params["intent.weight"] = rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, self.num_intents))
        params["intent.bias"] = np.zeros(self.num_intents)
        params["slot.weight"] = rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, self.num_slot_labels))
        params["slot.bias"] = np.zeros(self.num_slot_labels)
        params.update(self.crf.init_params(rng))
        return params

    def forward(self, params, sequences, train=False, rng=None):
        """Return ``(intent_logits[B, I], slot_emissions[B, L-1, K], slot_lengths[B])``."""
        enc = self.encoder.encode_batch(params, sequences, train=train, rng=rng)
        intent_logits = add(matmul(enc.pooled, params["intent.weight"]), params["intent.bias"])
        tokens = slice_axis(enc.hidden, 1, None, axis=1)
        emissions = add(matmul(tokens, params["slot.weight"]), params["slot.bias"])
        slot_lengths = enc.lengths - 1
        if slot_lengths.min() < 1:
            raise InputError("utterance has no tokens after CLS")
        return intent_logits, emissions, slot_lengths

    def example_losses(self, params, batch, train=False, rng=None):
        """Per-example ``CE(intent) + CRF NLL(slots)`` as a ``[B]`` tensor."""
        intent_logits, emissions, lengths = self.forward(params, [ex.ids for ex in batch], train, rng)
        intents = np.array([ex.intent for ex in batch], dtype=np.int64)
        if intents.min() < 0 or intents.max() >= self.num_intents:
            raise InputError("intent id out of range")
        width = emissions.shape[1]
        tags = np.zeros((len(batch), width), dtype=np.int64)
        for i, ex in enumerate(batch):
            s = np.asarray(ex.slots)[:width]
            tags[i, :len(s)] = s
        ce = nll_pick(log_softmax(intent_logits), intents)
        slot = self.crf.nll(params, emissions, tags, lengths)
        return add(ce, slot)

    def loss(self, params, batch, train=False, rng=None):
        """Mean joint loss over the batch."""
        return mean(self.example_losses(params, batch, train, rng))

    def predict(self, params, sequences):
        """Eval-mode prediction: ``(intent ids, list of slot label id lists)``."""
        intent_logits, emissions, lengths = self.forward(params, list(sequences))
        intents = np.argmax(intent_logits.values, axis=1)
        tr, st, en = (params[n].values for n in self.crf.names)
        slots = [viterbi_decode(emissions.values[i], tr, st, en, int(lengths[i]))[0] for i in range(len(lengths))]
        return intents, slots
