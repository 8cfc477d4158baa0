"""Statistical representation of vector fields over data manifolds."""

from .calculus import (channel_count, derivative_features,
                       directional_derivative_kernels, project_to_tangent,
                       vector_diffusion)
from .data import (LatentDistribution, PointCloud, TrajectoryEnsemble,
                   VectorFieldSample)
from .decode import (LinearDecoder, fit_linear_decoder, gaussian_rate,
                     knn_decode, pca_reduce, procrustes_consistency, r_squared)
from .dynamics import (DMTSProtocol, GaussianRNNStats, RNNSpec,
                       default_rnn_stats, dmts_inputs, lift_to_paraboloid,
                       sample_gaussian_lowrank_rnn, simulate_rnn,
                       simulate_rnn_trials, simulate_vanderpol, toy_fields,
                       vectors_from_trajectories)
from .geometry import (ConnectionLaplacian, ConnectionSet, TangentFrameSet,
                       build_connection_laplacian, compute_connections,
                       estimate_frames, estimate_manifold_dim,
                       kabsch_connection)
from .graph import (ProximityGraph, build_cknn_graph, farthest_point_subsample,
                    geodesic_neighborhood)
from .experiments import (linear_separability, permutation_pvalue,
                          repro_summaries, rnn_experiment,
                          toy_field_experiment, vanderpol_experiment)
from .io import (config_hash, load_dataset, load_manifest,
                 read_embeddings_csv, read_matrix_csv, read_report,
                 write_embeddings_csv, write_matrix_csv, write_report,
                 write_trajectory_dataset, write_vectorfield_dataset)
from .metrics import (DistanceMatrix, TransportPlan, classical_mds,
                      cluster_distance_matrix, distance_matrix, ot_distance,
                      sinkhorn_ot)
from .model import (ConditionData, FlowEmbedder, TrainConfig, contrastive_loss,
                    embed, load_checkpoint, prepare_condition,
                    sample_contrastive_pairs, save_checkpoint, train)

__version__ = "0.1.0"
