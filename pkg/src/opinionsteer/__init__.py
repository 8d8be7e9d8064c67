"""Leader-follower opinion dynamics with decentralized reward-driven steering.

A community of agents evolves multi-dimensional opinions in [0,1]^n.
Stubborn agents (leaders) never move; regular agents (followers) mix their
in-neighbors' opinions with their own initial opinion.  The package builds
and analyzes the resulting linear update (stability, equilibrium,
containment in the leaders' convex hull), exploits layered influence
structure for exact finite-step convergence, and implements the
decentralized rule by which followers rebuild their biases and influence
weights from locally observed rewards of a leader-specified utility field.
"""

from .analysis import (
    AnalysisReport,
    ContainmentReport,
    ConvergenceCertificate,
    EquilibriumResult,
    LayeredSystem,
    analyze_system,
    check_hurwitz,
    containment_check,
    convergence_certificate,
    equilibrium,
    layered_step,
    point_in_convex_hull,
    run_layered,
    solve_equilibrium,
    spectral_radius,
    steady_state_matrix,
    transform_to_layers,
)
from .dynamics import (
    SystemMatrices,
    assemble_system,
    influence_from_rows,
    input_vector,
    stack_opinions,
    step_agent,
    step_network,
    unstack_opinions,
)
from .errors import NoUniqueEquilibriumError, ScenarioError, ZeroRewardError
from .graph import (
    Community,
    EdgeSet,
    LayerPartition,
    LayerSelectors,
    all_stubborn_reachable,
    build_selection_matrices,
    in_neighbors,
    infer_layering,
    stubborn_reachable,
    validate_layering,
)
from .reward import (
    GaussianUtility,
    GridUtility,
    InfluenceRowUpdate,
    RewardObservation,
    RewardStepResult,
    UtilityField,
    evaluate_utility,
    grid_from_csv,
    local_reward_sum,
    reward_step,
    update_influence_row,
)
from .scenarios import (
    BUILTIN_SCENARIOS,
    GraphConfig,
    ScenarioConfig,
    UtilityConfig,
    WeightConfig,
    build_scenario,
    dnn57,
    irreducible100,
    load_config,
    random_tv,
    save_config,
)
from .simulator import (
    MonteCarloReport,
    RunReport,
    TrajectoryLog,
    compile_scenario,
    detect_convergence,
    monte_carlo,
    read_trajectory_csv,
    run,
    sample_edge_set,
)

__version__ = "0.1.0"
