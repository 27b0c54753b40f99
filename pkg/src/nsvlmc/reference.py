"""Published benchmark numbers (mean, std over ten runs) used by ``nsvlmc report``."""

PUBLISHED = {
    "jura": {
        "gp": {"mae": (0.5739, None)},
        "svlmc": {"mae": (0.4580, 0.0047), "nll": (0.9686, 0.0100)},
        "nmogp": {"mae": (0.4618, 0.0036), "nll": (1.0172, 0.0090)},
        "ngprn": {"mae": (0.5619, 0.0187), "nll": (1.2887, 0.0859)},
        "svlmc-dkl": {"mae": (0.5173, 0.0136), "nll": (1.0335, 0.0208)},
        "nsvlmc": {"mae": (0.4196, 0.0077), "nll": (0.8681, 0.0263)},
    },
    "eeg": {
        "gp": {"smse": (1.75, None), "nll": (2.60, None)},
        "svlmc": {"smse": (0.2335, 0.1183), "nll": (1.7184, 0.3521)},
        "nmogp": {"smse": (0.2148, 0.0554), "nll": (1.8835, 0.3058)},
        "ngprn": {"smse": (1.9012, 0.7016), "nll": (8.9466, 4.6042)},
        "svlmc-dkl": {"smse": (1.7883, 0.7998), "nll": (3.0267, 0.6609)},
        "nsvlmc": {"smse": (0.1783, 0.0185), "nll": (1.7035, 0.2409)},
    },
    "sarcos_a": {
        "svgp": {"smse": (0.1397, 0.0143), "nll": (2.8457, 0.0776)},
        "svlmc": {"smse": (0.0708, 0.0044), "nll": (2.7476, 0.0506)},
        "nmogp": {"smse": (0.0756, 0.0031), "nll": (2.7568, 0.0210)},
        "ngprn": {"smse": (0.1586, 0.0367), "nll": (56.3878, 16.6132)},
        "svlmc-dkl": {"smse": (0.0761, 0.0070), "nll": (2.7637, 0.0526)},
        "nsvlmc": {"smse": (0.0665, 0.0046), "nll": (2.6902, 0.0442)},
    },
    "sarcos_b": {
        "svgp": {"smse": (0.0235, 0.0009), "nll": (2.3348, 0.0085)},
        "svlmc": {"smse": (0.0278, 0.0112), "nll": (2.2047, 0.1700)},
        "nmogp": {"smse": (0.0284, 0.0147), "nll": (2.2069, 0.1880)},
        "ngprn": {"smse": (0.0139, 0.0018), "nll": (1.8113, 0.0567)},
        "svlmc-dkl": {"smse": (0.0221, 0.0026), "nll": (2.1246, 0.0565)},
        "nsvlmc": {"smse": (0.0177, 0.0011), "nll": (1.9807, 0.0311)},
    },
    "sarcos_c": {
        "svgp": {"smse": (0.0951, 0.0025), "nll": (0.8238, 0.0128)},
        "svlmc": {"smse": (0.2445, 0.0743), "nll": (1.2129, 0.2073)},
        "nmogp": {"smse": (0.1628, 0.0433), "nll": (1.0309, 0.1701)},
        "ngprn": {"smse": (0.0941, 0.0079), "nll": (0.9536, 0.0732)},
        "svlmc-dkl": {"smse": (0.1962, 0.0167), "nll": (1.1408, 0.0395)},
        "nsvlmc": {"smse": (0.0891, 0.0254), "nll": (0.7119, 0.1530)},
    },
}


def published(case: str, variant: str) -> dict:
    return PUBLISHED.get(case, {}).get(variant, {})
