"""Q-learning bidders in repeated first- and second-price auctions."""

__version__ = "0.1.0"

from .auction import (  # noqa: E402
    AuctionOutcome,
    BidGrid,
    CounterfactualValue,
    PaymentRule,
    counterfactual_action_values,
    make_bid_grid,
    settle_auction,
)
from .agent import (  # noqa: E402
    AgentParams,
    Exploration,
    ExplorationSchedule,
    QTable,
    decay_exploration,
    init_agent,
    select_bid,
    update_async,
    update_sync,
)
from .trial import (  # noqa: E402
    ConvergenceMonitor,
    EpisodeLog,
    TrialConfig,
    TrialOutcomes,
    compute_outcomes,
    run_trial,
)
from .experiment import (  # noqa: E402
    Dataset,
    ExperimentConfig,
    TrialRecord,
    TrialSimulator,
    read_dataset,
    run_experiment,
    sample_trial_config,
    write_dataset,
)
from .stats import (  # noqa: E402
    DesignMatrix,
    InteractedCATE,
    OLSRegressor,
    RegressionResult,
    interacted_cate,
    ols,
    run_paper_regressions,
    summarize,
)
