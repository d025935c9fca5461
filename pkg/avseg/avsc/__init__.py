from .audio_head import HEAD_MODES, AudioHead, audio_forward, validate_audio_distribution
from .filters import PotentialInstance, category_filter, potential_instances, score_filter
from .localization import (category_masks, compose_backward, compose_batch, compose_batch_backward,
                           compose_localization)
from .pipeline import highest_confidence_instance, infer, instance_sounding_masks

__all__ = ['HEAD_MODES', 'AudioHead', 'audio_forward', 'validate_audio_distribution', 'PotentialInstance',
           'category_filter', 'potential_instances', 'score_filter', 'category_masks', 'compose_backward',
           'compose_batch', 'compose_batch_backward', 'compose_localization', 'highest_confidence_instance',
           'infer', 'instance_sounding_masks']
