"""Published reference numbers used as test oracles."""

# top-10 validation-ranked models per setting:
# (setting, val_f1, loss, lr, arch, test_precision, test_recall, test_f1)
TOP10 = [
    ("S1", 0.488, "BCELoss", 0.001, "PAN", 0.865, 0.172, 0.287),
    ("S1", 0.479, "JaccardLoss", 0.001, "FPN", 0.148, 0.399, 0.216),
    ("S1", 0.474, "BCELoss", 0.01, "UnetPP", 0.685, 0.175, 0.278),
    ("S1", 0.455, "DiceLoss", 0.001, "Unet", 0.703, 0.496, 0.582),
    ("S1", 0.453, "DiceLoss", 0.001, "DeepLabV3", 0.734, 0.273, 0.398),
    ("S1", 0.449, "DiceLoss", 0.01, "Linknet", 0.664, 0.316, 0.428),
    ("S1", 0.443, "BCELoss", 0.01, "MANet", 0.718, 0.383, 0.500),
    ("S1", 0.438, "FocalLoss", 0.01, "Linknet", 0.690, 0.324, 0.441),
    ("S1", 0.436, "JaccardLoss", 0.001, "PAN", 0.635, 0.241, 0.350),
    ("S1", 0.428, "JaccardLoss", 0.001, "Unet", 0.759, 0.351, 0.480),
    ("S2", 0.694, "FocalLoss", 0.01, "Linknet", 0.516, 0.534, 0.525),
    ("S2", 0.691, "BCELoss", 0.01, "UnetPP", 0.322, 0.673, 0.435),
    ("S2", 0.687, "JaccardLoss", 0.001, "PAN", 0.553, 0.510, 0.531),
    ("S2", 0.682, "BCELoss", 0.01, "Linknet", 0.355, 0.514, 0.420),
    ("S2", 0.668, "DiceLoss", 0.01, "UnetPP", 0.297, 0.747, 0.425),
    ("S2", 0.645, "JaccardLoss", 0.01, "DeepLabV3", 0.516, 0.490, 0.503),
    ("S2", 0.643, "LovaszLoss", 0.001, "DeepLabV3Plus", 0.495, 0.646, 0.560),
    ("S2", 0.641, "JaccardLoss", 0.001, "Unet", 0.342, 0.679, 0.455),
    ("S2", 0.640, "FocalLoss", 0.01, "MANet", 0.375, 0.730, 0.496),
    ("S2", 0.637, "BCELoss", 0.01, "Unet", 0.352, 0.690, 0.467),
    ("S1S2", 0.751, "FocalLoss", 0.01, "UnetPP", 0.708, 0.589, 0.643),
    ("S1S2", 0.750, "FocalLoss", 0.001, "UnetPP", 0.647, 0.598, 0.621),
    ("S1S2", 0.748, "JaccardLoss", 0.01, "UnetPP", 0.791, 0.620, 0.695),
    ("S1S2", 0.747, "DiceLoss", 0.001, "Linknet", 0.806, 0.589, 0.681),
    ("S1S2", 0.746, "JaccardLoss", 0.001, "FPN", 0.709, 0.492, 0.581),
    ("S1S2", 0.746, "DiceLoss", 0.001, "UnetPP", 0.636, 0.616, 0.626),
    ("S1S2", 0.745, "JaccardLoss", 0.001, "UnetPP", 0.678, 0.624, 0.650),
    ("S1S2", 0.744, "BCELoss", 0.01, "UnetPP", 0.716, 0.546, 0.619),
    ("S1S2", 0.742, "DiceLoss", 0.01, "UnetPP", 0.648, 0.661, 0.655),
    ("S1S2", 0.741, "BCELoss", 0.01, "Unet", 0.584, 0.612, 0.597),
    ("ALL", 0.727, "DiceLoss", 0.001, "Unet", 0.710, 0.599, 0.650),
    ("ALL", 0.725, "DiceLoss", 0.001, "UnetPP", 0.742, 0.639, 0.687),
    ("ALL", 0.720, "JaccardLoss", 0.001, "PAN", 0.657, 0.575, 0.613),
    ("ALL", 0.719, "JaccardLoss", 0.01, "FPN", 0.684, 0.620, 0.650),
    ("ALL", 0.719, "JaccardLoss", 0.001, "Unet", 0.847, 0.550, 0.667),
    ("ALL", 0.715, "JaccardLoss", 0.001, "Linknet", 0.812, 0.556, 0.660),
    ("ALL", 0.713, "DiceLoss", 0.001, "FPN", 0.629, 0.556, 0.591),
    ("ALL", 0.712, "DiceLoss", 0.01, "Unet", 0.788, 0.568, 0.660),
    ("ALL", 0.708, "FocalLoss", 0.001, "Unet", 0.731, 0.582, 0.648),
    ("ALL", 0.706, "JaccardLoss", 0.01, "UnetPP", 0.770, 0.565, 0.652),
]

# best single test F1 and top-k ensemble test F1 with the printed % gain
ENSEMBLE_GAINS = {
    "S1": (0.29, {10: (0.44, 34), 20: (0.40, 29), 40: (0.43, 34)}),
    "S2": (0.52, {10: (0.57, 8), 20: (0.61, 15), 40: (0.60, 13)}),
    "S1S2": (0.64, {10: (0.68, 5), 20: (0.69, 7), 40: (0.69, 6)}),
    "ALL": (0.65, {10: (0.66, 2), 20: (0.66, 2), 40: (0.68, 4)}),
}

# the S2 top-20 gain quoted with two decimals
S2_K20_GAIN = 14.59
