from .toy import ToyModel, build_model

__all__ = ['ToyModel', 'build_model']
