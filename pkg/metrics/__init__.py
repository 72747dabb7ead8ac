from metrics.distances import chamfer, emd, emd_matching
from metrics.sets import coverage, jsd, mmd, normalize_eval, one_nna
from metrics.report import MetricsReport, evaluate_sets, reconstruction_report
