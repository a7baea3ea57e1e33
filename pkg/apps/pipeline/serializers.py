from rest_framework import serializers

from apps.detectors.registry import DETECTOR_TYPES


class TilingSerializer(serializers.Serializer):
    window_px = serializers.IntegerField(min_value=1, required=False)
    overlap = serializers.FloatField(min_value=0.0, required=False)

    def validate_overlap(self, value):
        if value >= 1.0:
            raise serializers.ValidationError('Overlap must be below 1.')
        return value


class ClassSerializer(serializers.Serializer):
    name = serializers.CharField()
    small_object = serializers.BooleanField(default=False)
    min_size_m = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    max_size_m = serializers.FloatField(min_value=0.0, required=False, allow_null=True)

    def validate_name(self, value):
        if any(ch in value for ch in ',\n\t'):
            raise serializers.ValidationError('Class names cannot contain commas, tabs or newlines.')
        return value

    def validate(self, attrs):
        low, high = attrs.get('min_size_m'), attrs.get('max_size_m')
        if low is not None and high is not None and low > high:
            raise serializers.ValidationError({'max_size_m': 'Must not be below min_size_m.'})
        return attrs


class RangeField(serializers.ListField):
    """Two-element [low, high] list"""

    child = serializers.FloatField()

    def __init__(self, **kwargs):
        kwargs.setdefault('min_length', 2)
        kwargs.setdefault('max_length', 2)
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        value = super().to_internal_value(data)
        if value[0] > value[1]:
            raise serializers.ValidationError('Range must be [low, high].')
        return tuple(value)


class DetectorBindingSerializer(serializers.Serializer):
    type = serializers.ChoiceField(choices=DETECTOR_TYPES)
    # oracle
    dropout_prob = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    fp_rate = serializers.FloatField(min_value=0.0, required=False)
    jitter_px = serializers.FloatField(min_value=0.0, required=False)
    tp_range = RangeField(required=False)
    fp_range = RangeField(required=False)
    truncation = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    # gridsim
    downsample = serializers.IntegerField(min_value=1, required=False)
    boxes_per_cell = serializers.IntegerField(min_value=1, required=False)
    # external / http
    command = serializers.CharField(required=False)
    workdir = serializers.CharField(required=False)
    url = serializers.URLField(required=False)
    timeout = serializers.FloatField(min_value=0.0, required=False)

    def validate(self, attrs):
        if attrs['type'] == 'external' and not attrs.get('command'):
            raise serializers.ValidationError({'command': 'External detectors need a command template.'})
        if attrs['type'] == 'http' and not attrs.get('url'):
            raise serializers.ValidationError({'url': 'HTTP detectors need a url.'})
        return attrs


class ProfileSerializer(serializers.Serializer):
    name = serializers.CharField()
    window_m = serializers.FloatField(min_value=0.0)
    window_px = serializers.IntegerField(min_value=1)
    classes = serializers.ListField(child=serializers.CharField(), allow_empty=True)
    detector = DetectorBindingSerializer()
    downsample = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    simulate_2x = serializers.BooleanField(default=False)

    def validate_window_m(self, value):
        if value <= 0:
            raise serializers.ValidationError('Must be positive.')
        return value

    def validate(self, attrs):
        if attrs['simulate_2x'] and attrs['window_px'] % 2:
            raise serializers.ValidationError({'window_px': '2x simulation needs an even window.'})
        stride = attrs['detector'].get('downsample')
        if attrs.get('downsample') is not None and stride is not None and stride != attrs['downsample']:
            raise serializers.ValidationError({'downsample': 'Must match the detector binding downsample.'})
        return attrs


class EnsembleSerializer(serializers.Serializer):
    profiles = ProfileSerializer(many=True, allow_empty=False)
    size_filter = serializers.BooleanField(default=False)

    def validate_profiles(self, value):
        seen = set()
        for profile in value:
            shared = seen & set(profile['classes'])
            if shared:
                raise serializers.ValidationError(f"Classes {sorted(shared)} are routed to more than one profile.")
            seen |= set(profile['classes'])
        return value


class EvaluationSerializer(serializers.Serializer):
    iou_default = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    iou_small_object = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    threshold_count = serializers.IntegerField(min_value=1, required=False)
    threshold_min = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    threshold_max = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)


class RunConfigSerializer(serializers.Serializer):
    image = serializers.CharField()
    ground_truth = serializers.CharField(required=False, allow_null=True)
    out = serializers.CharField(required=False)
    workers = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(min_value=0, required=False)
    nms_iou = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    tiling = TilingSerializer(required=False)
    classes = ClassSerializer(many=True, required=False, allow_empty=False)
    detector = DetectorBindingSerializer(required=False)
    ensemble = EnsembleSerializer(required=False)
    evaluation = EvaluationSerializer(required=False)

    def validate_nms_iou(self, value):
        if value <= 0:
            raise serializers.ValidationError('Must lie in (0, 1].')
        return value

    def validate(self, attrs):
        if 'detector' not in attrs and 'ensemble' not in attrs:
            raise serializers.ValidationError('Declare either a detector or an ensemble.')
        if 'detector' in attrs and 'ensemble' in attrs:
            raise serializers.ValidationError('Declare a detector or an ensemble, not both.')
        return attrs


class SceneObjectSerializer(serializers.Serializer):
    # scene files say "class", a keyword in Python
    class_name = serializers.CharField()
    count = serializers.IntegerField(min_value=0)
    size_m = serializers.FloatField(min_value=0.0)

    def to_internal_value(self, data):
        if isinstance(data, dict) and 'class' in data and 'class_name' not in data:
            data = {**data, 'class_name': data['class']}
        return super().to_internal_value(data)

    def validate_size_m(self, value):
        if value <= 0:
            raise serializers.ValidationError('Must be positive.')
        return value


class SceneSpecSerializer(serializers.Serializer):
    name = serializers.CharField()
    gsd_m = serializers.FloatField(min_value=0.0)
    extent_m = serializers.FloatField(min_value=0.0, required=False)
    width_px = serializers.IntegerField(min_value=1, required=False)
    height_px = serializers.IntegerField(min_value=1, required=False)
    bands = serializers.ChoiceField(choices=(1, 3), default=3)
    seed = serializers.IntegerField(min_value=0, default=0)
    max_overlap = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.0)
    objects = SceneObjectSerializer(many=True, required=False)

    def validate_gsd_m(self, value):
        if value <= 0:
            raise serializers.ValidationError('Must be positive.')
        return value

    def validate_name(self, value):
        if any(ch in value for ch in '|/\t\n'):
            raise serializers.ValidationError("Scene names cannot contain '|', '/', tabs or newlines.")
        return value

    def validate(self, attrs):
        has_extent = attrs.get('extent_m') is not None
        has_pixels = attrs.get('width_px') is not None and attrs.get('height_px') is not None
        if has_extent == has_pixels:
            raise serializers.ValidationError('Give either extent_m or both width_px and height_px.')
        return attrs


class AugmentSpecSerializer(serializers.Serializer):
    rotation_angles = serializers.ListField(child=serializers.FloatField(), allow_empty=False, default=[0.0])
    hue = RangeField(required=False, default=(1.0, 1.0))
    saturation = RangeField(required=False, default=(1.0, 1.0))
    value = RangeField(required=False, default=(1.0, 1.0))
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        for key in ('hue', 'saturation', 'value'):
            if attrs[key][0] <= 0:
                raise serializers.ValidationError({key: 'Scale factors must be positive.'})
        return attrs
