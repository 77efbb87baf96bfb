"""Train the ferroelectric network on the desk-scale pattern task.

Small run of the shipped configuration: 4 Poisson pattern classes over
12 channels, a LIF hidden layer at the window rate and a ferroelectric
output layer integrated on the fine grid, trained with the spliced
two-timescale gradient.  Shrunk here (fewer samples, coarser fine
grid, 15 epochs) so it finishes in well under a minute; the full cell
is the `default_cell("felif")` configuration unchanged.
"""

from bruno import netdata, training


def main():
    ds = netdata.generate_dataset(
        netdata.DatasetSpec(samples_per_class=24, seed=0))
    print(f"dataset: {ds.spec.classes} classes x {ds.spec.channels} "
          f"channels, {len(ds.train)}/{len(ds.val)}/{len(ds.test)} "
          "train/val/test\n")

    cfg, spec = training.default_cell(
        "felif", overrides={"epochs": 15, "substeps": 200, "seed": 0})
    net = netdata.build_network(spec, seed=cfg.seed)
    print(f"network: {spec.n_in} -> {spec.n_hidden} lif -> {spec.n_out} "
          f"felif, mode={cfg.mode}, {cfg.t_steps} windows x "
          f"{cfg.substeps} substeps ({cfg.dt_fine * 1e6:.0f} us physics)\n")

    run = training.train(net, ds, cfg, verbose=True)

    print(f"\nstatus: {run.status}")
    print(f"test accuracy: {run.test_acc:.3f}")
    print(f"peak tape nodes per batch: "
          f"{max(e['peak_nodes'] for e in run.epochs)}")
    print("\n(the same run with every fine substep on the tape would "
          "need about\n200x the graph; at the full 1000-substep grid "
          "that is the difference\nbetween fitting in memory and not)")


if __name__ == "__main__":
    main()
