from utils.errors import PointDiffusionError
from utils.rng import RngStream, child_of
