from .matcher import (CostWeights, GroundTruthSegment, InstancePrediction, MatchingIndex, brute_force_match,
                      cost_matrix, match, pair_cost, solve_assignment, validate_class_scores)

__all__ = ['CostWeights', 'GroundTruthSegment', 'InstancePrediction', 'MatchingIndex', 'brute_force_match',
           'cost_matrix', 'match', 'pair_cost', 'solve_assignment', 'validate_class_scores']
