use barcode::data_model::{CountMatrix, CovariateMatrix, FactorState, HyperParams, LoadingState};
use barcode::latent_regression::RegressionState;

pub struct Instance {
    pub y: CountMatrix,
    pub dense: Vec<Vec<u32>>,
    pub x: CovariateMatrix,
    pub factors: FactorState,
    pub loadings: LoadingState,
    pub regression: RegressionState,
    pub hypers: HyperParams,
}

/// n = 3 samples, p = 2 species, L = 2 factors.
pub fn tiny_instance() -> Instance {
    let dense = vec![vec![2, 0], vec![1, 3], vec![0, 1]];
    let y = CountMatrix::from_dense(&dense, vec![0, 0, 0]).unwrap();
    let x = CovariateMatrix::from_raw(3, 2, vec![1.0, -0.8, 1.0, 0.3, 1.0, 1.1], vec!["intercept".into(), "x1".into()])
        .unwrap();
    let factors = FactorState::new(3, 2, vec![1, 1, 1, 0, 1, 1], vec![1.0, 0.7, 1.0, 1.6, 1.0, 0.4]).unwrap();
    let loadings = LoadingState::new(2, 2, vec![1, 0, 1, 1], vec![1.1, 0.6, 0.9, 2.5], vec![0.8, 1.3], 0.45).unwrap();
    let mut regression = RegressionState::zeros(3, 2, 2, 0);
    regression.beta[2] = 0.2;
    regression.beta[3] = -0.5;
    let hypers = HyperParams {
        block_size: 2,
        ..HyperParams::with_factors(2)
    };
    Instance {
        y,
        dense,
        x,
        factors,
        loadings,
        regression,
        hypers,
    }
}
