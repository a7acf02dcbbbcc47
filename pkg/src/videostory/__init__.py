"""Joint text and video embeddings learned from described videos.

Videos with captions are factorized into a shared latent space that both
reconstructs their binary term vectors and is predictable from their
features.  The learned projections support few-example event classifiers
and zero-example ranking from a textual event definition.
"""

from .corpus import Corpus, FeatureMatrix, TermMatrix, TermVocabulary, build_vocabulary, encode_term_matrix, split_corpus, tokenize
from .embedding import EmbeddingModel, Hyperparams, TrainState, embed, predict_terms, sgd_train, svd_init, total_objective
from .errors import VideoStoryError
from .evaluation import APResult, LabeledSet, average_precision, mean_average_precision, train_event_classifier
from .fusion import MultimodalModel, embed_fused, sgd_train_fused
from .zeroshot import EventDefinition, EventQuery, ImportanceMatrix, Ranking, build_event_query, build_importance, cosine_rank, train_zero

__version__ = "0.1.0"
