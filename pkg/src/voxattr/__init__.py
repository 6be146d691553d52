"""Voxel-grid CNN scoring of protein-ligand complexes with attribution."""

from .molio import (
    Atom,
    AtomType,
    AtomTypeTable,
    Complex,
    FragmentSet,
    ParseError,
    default_type_table,
    enumerate_fragments,
    parse_complex,
    parse_type_table,
    remove_atoms,
    residue_groups,
    serialize_complex,
)
from .gridder import (
    DensityGrid,
    GridSpec,
    RigidTransform,
    atom_density,
    atom_density_ddist,
    grid_gradient_to_atoms,
    random_transform,
    voxelize,
)
from .tensornet import (
    ActivationTape,
    Conv3D,
    Dense,
    Flatten,
    HeadOutputs,
    MaxPool3D,
    Model,
    ModelSpec,
    ModelWeights,
    ReLU,
    TrainConfig,
    affinity_loss,
    backward_to_input,
    forward,
    init_weights,
    load_model,
    pose_loss,
    save_model,
    train_toy,
    zero_weights,
)
from .attribution import (
    AtomScoreMap,
    EmptySpaceGrid,
    RelevanceTape,
    clrp,
    clrp_relevance,
    coordinate_gradients,
    empty_space_relevance,
    head_scalar,
    mask_atoms,
    mask_fragments,
    mask_residues,
    masking_combined,
    normalize_scores,
    score_complex,
)
from .filterviz import FilterSummary, build_filter_summary, channel_averages, cluster_filters, flatten_filters
from .analysis import AdditivityRecord, CorrelationRecord, additivity, method_correlation, pearson

__version__ = "0.1.0"
