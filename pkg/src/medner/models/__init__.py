from medner.models.crf import CRF, crf_log_partition, crf_negative_log_likelihood, crf_path_score, crf_viterbi
from medner.models.embeddings import EmbeddingConfig, Vocab, WordRepresentation, load_pretrained_embeddings
from medner.models.heads import HeadConfig, TokenHead, classify_tokens, dual_encoder_forward
from medner.models.recurrent import BiLSTM, BiLstmConfig, CharEncoder, LSTMDirection, StackedBiLSTM, bilstm_forward
from medner.models.taggers import (
    FAMILIES, BiLstmCrfTagger, DualEncoderTagger, EncoderTagger, ModelConfig, Tagger, build_tagger, tagger_from_meta,
)
from medner.models.transformer import EncoderConfig, TransformerEncoder, transformer_forward
