from calc import add, mean


def summary(values):
    return {"total": sum(values), "mean": mean(values)}


def broken_total(values):
    return totl + add(values[0], values[1])


def broken_label():
    return labl.upper()
