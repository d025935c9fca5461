"""
统一异常定义 - 校验类错误(退出码1)与内部错误(退出码2)分开
"""


class AVSegError(Exception):
    """avseg 所有异常的基类"""


class ValidationError(AVSegError, ValueError):
    """输入不合法，命令行返回退出码 1"""


class ShapeMismatchError(ValidationError):
    pass


class CategoryError(ValidationError):
    pass


class SimplexViolationError(ValidationError):
    pass


class MatchingError(ValidationError):
    pass


class ThresholdError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ManifestError(ValidationError):
    pass


class MissingMaskFileError(ManifestError):
    pass


class MalformedDocumentError(ManifestError):
    pass


class FormatError(ValidationError):
    """PGM / SASL / AVSM 二进制格式错误"""


class InfeasibleSceneError(ValidationError):
    pass


class TrainingDivergenceError(AVSegError):
    """训练过程中出现非有限损失值"""


class MissingManifestError(ManifestError):
    pass
