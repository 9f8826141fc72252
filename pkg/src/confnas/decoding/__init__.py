"""N-best beam decoding, n-gram LM rescoring and two-pass system combination."""
from .beam import DecodeError, beam_search_nbest, encode_utterance
from .ctc_prefix import CTCPrefixScorer, ctc_sequence_logprob
from .lm import LMError, NGramLM, arpa_dumps, arpa_loads, load_arpa, save_arpa, train_kn_lm
from .nbest import Hypothesis, NBestError, NBestList
from .rescore import (ConformerRescorer, LMRescorer, cross_system_combine, lm_rescore,
                      score_sequences, two_pass)

__all__ = [
    "CTCPrefixScorer", "ConformerRescorer", "DecodeError", "Hypothesis", "LMError",
    "LMRescorer", "NBestError", "NBestList", "NGramLM", "arpa_dumps", "arpa_loads",
    "beam_search_nbest", "cross_system_combine", "ctc_sequence_logprob", "encode_utterance",
    "lm_rescore", "load_arpa", "save_arpa", "score_sequences", "train_kn_lm", "two_pass",
]
