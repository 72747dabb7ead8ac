from pipeline.diffusion import DiffusionSchedule, make_schedule
from pipeline.nets import Denoiser, Encoder, FlowPrior, ShapeModel
from pipeline.checkpoint import Checkpoint
from pipeline.train import Trainer, train
from pipeline.sampling import Sampler, generate, interpolate, reconstruct
