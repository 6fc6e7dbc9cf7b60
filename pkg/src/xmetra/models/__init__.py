from xmetra.models.checkpoint import load_checkpoint, save_checkpoint
from xmetra.models.crf import (
    CrfLayer,
    crf_log_partition,
    crf_nll,
    crf_path_score,
    log_partition_values,
    viterbi_decode,
)
from xmetra.models.encoder import CLS_ID, PAD_ID, SEP_ID, UNK_ID, EncoderConfig, TokenEncoder
from xmetra.models.nlu import EncodedUtterance, IntentSlotModel
from xmetra.models.qa import EncodedQA, QASpanModel, pack

__all__ = [
    "CLS_ID", "PAD_ID", "SEP_ID", "UNK_ID",
    "CrfLayer", "EncodedQA", "EncodedUtterance", "EncoderConfig", "IntentSlotModel",
    "QASpanModel", "TokenEncoder",
    "crf_log_partition", "crf_nll", "crf_path_score", "load_checkpoint",
    "log_partition_values", "pack", "save_checkpoint", "viterbi_decode",
]
