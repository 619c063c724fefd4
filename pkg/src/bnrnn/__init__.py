"""Batch-normalized recurrent network training library."""

from .autodiff import Parameter, check_gradients, softmax_cross_entropy
from .data import (AlignmentData, CharLmData, SequenceBatch, Vocabulary,
                   char_corpus_from_text, load_char_corpus, make_lm_batches,
                   make_padded_batches, make_alignment_data,
                   synth_alignment_task)
from .metrics import cross_entropy, frame_error_rate, perplexity
from .normalization import (BatchNormLayer, NormAxis, StatisticsStore,
                            batch_statistics, bn_apply, standardize,
                            update_running)
from .recurrent import (LstmCell, Placement, RecurrentLayer, RecurrentStack,
                        RnnCell, build_stack, init_parameters, lstm_step,
                        rnn_step, run_sequence)
from .tensor import Tensor
from .training import (LrSchedule, SearchSpace, TrainConfig, lr_at,
                       random_search, rescale_gradients, sgd_momentum_step,
                       train)

__all__ = [name for name in dir() if not name.startswith("_")]
