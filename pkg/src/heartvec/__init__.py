"""Heart-sound normal/abnormal classification from MFCC i-vectors."""

from .container import load_model, save_model
from .dataset import AudioRecord, Label, LabelTable, Quality, SplitSpec, load_reference, load_wav, split_train_eval
from .evaluation import EvalReport, EvalWeights, compute_macc, compute_se_sp, sweep_curve
from .gmm import Gmm, em_fit, gmm_log_pdf, llr_score, posteriors
from .ivector import BaumWelchStats, TotalVariabilityModel, accumulate_stats, extract_ivector, train_tv
from .mfcc import MfccConfig, extract_mfcc
from .pca import PcaModel, pca_fit, pca_project
from .pipeline import PipelineConfig, TrainedSystem, train_system
from .svm import SvmModel, svm_decision, svm_train
from .vae import VaeModel, vae_encode, vae_fit

__version__ = "0.1.0"
