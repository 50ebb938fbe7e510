import enum

from marshmallow import fields, post_load, pre_dump, Schema, validate, ValidationError

from . import types


class EnumField(fields.Field):
    def __init__(self, cls, *args, **kwargs):
        assert issubclass(cls, enum.Enum)
        self.enum = cls

        return super().__init__(*args, **kwargs)

    def _serialize(self, value, attr, obj, **kwargs):
        return value.value

    def _deserialize(self, value, attr, data, **kwargs):
        try:
            return self.enum(value)
        except ValueError as e:
            raise ValidationError(str(e)) from e


class StepsField(fields.Field):
    """Step index -> display name; TOML keys are always strings"""

    def _serialize(self, value, attr, obj, **kwargs):
        return {str(index): name for index, name in sorted(value.items())}

    def _deserialize(self, value, attr, data, **kwargs):
        if not isinstance(value, dict):
            raise ValidationError("steps must be a table")
        try:
            steps = {int(index): str(name) for index, name in value.items()}
        except ValueError as e:
            raise ValidationError(f"step keys must be integers: {e}") from e
        if any(index < 0 for index in steps):
            raise ValidationError("step indices must be non-negative")
        return steps


class ManifestSchema(Schema):
    dimension = fields.Integer(required=True, validate=validate.Range(min=1))
    steps = StepsField(required=True)
    labels = fields.List(fields.String(), required=True)

    @post_load
    def make_obj(self, data, **kwargs):
        return types.Manifest(**data)


class SynthConfigSchema(Schema):
    preset = EnumField(types.Preset, required=True)
    dimension = fields.Integer()
    classes = fields.Integer()
    per_class = fields.Integer()
    steps = fields.Integer()
    separation = fields.Float()
    noise = fields.Float()
    drift = fields.Float()
    rng_seed = fields.Integer()

    @post_load
    def make_obj(self, data, **kwargs):
        return types.SynthConfig(**data)


class RunConfigSchema(Schema):
    dim = fields.Integer()
    seeds_per_class = fields.Integer()
    classifier = EnumField(types.ClassifierKind)
    modes = fields.List(EnumField(types.Mode))
    rng_seed = fields.Integer()
    clusters = fields.Integer()
    oversample = fields.Boolean()
    all_includes_future = fields.Boolean()
    pseudo_label_iterations = fields.Integer()
    eval_split = EnumField(types.Split)
    knn_k = fields.Integer()
    svm_c = fields.Float()
    svm_gamma = fields.Float(allow_none=True)
    mlp_hidden = fields.Integer()
    mlp_epochs = fields.Integer()
    mlp_batch = fields.Integer()
    mlp_lr = fields.Float()

    # results do not depend on the pool size
    jobs = fields.Integer(load_only=True)

    @post_load
    def make_obj(self, data, **kwargs):
        return types.RunConfig(**data)


class MetricCellSchema(Schema):
    accuracy = fields.Float(required=True)
    macro_f1 = fields.Float(required=True)
    per_class_f1 = fields.Dict(keys=fields.String(), values=fields.Float())
    support = fields.Dict(keys=fields.String(), values=fields.Integer())
    n_train = fields.Integer()
    n_eval = fields.Integer()


class CellEntrySchema(MetricCellSchema):
    step = fields.Integer(required=True)
    mode = EnumField(types.Mode, required=True)


class ReportSchema(Schema):
    steps = StepsField(required=True)
    modes = fields.List(EnumField(types.Mode), required=True)
    cells = fields.List(fields.Nested(CellEntrySchema), required=True)
    averages = fields.Dict(
        keys=fields.String(),
        values=fields.Dict(keys=fields.String(), values=fields.Float()),
    )
    provenance = fields.Dict(keys=fields.String())

    @pre_dump
    def flatten_cells(self, report, **kwargs):
        cells = [
            {'step': step, 'mode': mode, **vars(cell)}
            for (step, mode), cell in sorted(
                report.cells.items(),
                key=lambda item: (item[0][0], list(types.Mode).index(item[0][1])),
            )
        ]
        return {
            'steps': report.steps,
            'modes': report.modes,
            'cells': cells,
            'averages': {
                mode.value: values for mode, values in report.averages.items()
            },
            'provenance': report.provenance,
        }

    @post_load
    def make_obj(self, data, **kwargs):
        cells = {}
        for entry in data['cells']:
            step, mode = entry.pop('step'), entry.pop('mode')
            cells[step, mode] = types.MetricCell(**entry)

        return types.Report(
            steps=data['steps'],
            modes=data['modes'],
            cells=cells,
            averages={
                types.Mode(key): value for key, value in data['averages'].items()
            },
            provenance=data.get('provenance', {}),
        )
