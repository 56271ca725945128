//! Canned figure configurations: frozen base configs plus the grid each
//! figure sweeps, so reproducing a figure's data is one command.

/// A named, version-controlled figure recipe.
#[derive(Debug, Clone, Copy)]
pub struct FigureSpec {
    pub name: &'static str,
    pub description: &'static str,
    /// Base config (the same text lives under `configs/`).
    pub config: &'static str,
    /// Grid swept on top of the base config.
    pub grid: &'static str,
}

pub const FIGURES: &[FigureSpec] = &[
    FigureSpec {
        name: "fig3",
        description: "slot-count trade-off: K sweep at fixed frame budget (matched sparsity)",
        config: include_str!("../../configs/fig3.toml"),
        grid: "k=1,5,10",
    },
    FigureSpec {
        name: "fig4",
        description: "genie-aided selection: active-user counts per frame, with/without memory",
        config: include_str!("../../configs/fig4.toml"),
        grid: "gamma=0.0,1.0",
    },
    FigureSpec {
        name: "fig5",
        description: "policy comparison: fixed/random vs threshold vs genie, gamma 0 and 1",
        config: include_str!("../../configs/fig5.toml"),
        grid: "policy=fixed_random:10,fixed_random:5,aog,genie:20;gamma=0.0,1.0",
    },
    FigureSpec {
        name: "fig7",
        description: "mean local gradient+memory magnitude per frame across K",
        config: include_str!("../../configs/fig7.toml"),
        grid: "k=5,10,20",
    },
    FigureSpec {
        name: "gamma",
        description: "forget-coefficient sweep",
        config: include_str!("../../configs/gamma_sweep.toml"),
        grid: "gamma=0.1,0.5,0.7,0.8,0.9,1.0",
    },
    FigureSpec {
        name: "sparsify",
        description: "top-k vs rand-k compression across K",
        config: include_str!("../../configs/sparsify_compare.toml"),
        grid: "compression=top_k,rand_k;k=5,10,20",
    },
];

pub fn lookup(name: &str) -> Option<&'static FigureSpec> {
    FIGURES.iter().find(|f| f.name == name)
}
