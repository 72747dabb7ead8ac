from data.cloud import PointCloud, as_points, normalize_train, is_train_normalized
from data.shapes import sample_params, sample_shape
from data.dataset import Dataset, DatasetEntry, make_dataset, load_dataset, oracle_reconstruction_cd
from data.io import read_cloud, write_cloud, list_clouds
