use ndarray::Array2;

use gsdm_core::diffusion::{covariance_kernel, covariance_kernel_with, KernelIndex};
use gsdm_core::oracles::run_suite;

use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub fn verify(settings: &Settings, inject_kernel_bug: bool) -> CliResult<()> {
    let opts = settings.verify_options()?;
    let kernel = move |u: &Array2<f64>, idx: KernelIndex| {
        if inject_kernel_bug {
            covariance_kernel_with(u, idx, |s, t| s * t)
        } else {
            covariance_kernel(u, idx)
        }
    };
    if inject_kernel_bug {
        println!("note: covariance kernel replaced by a faulty variant");
    }
    let reports = run_suite(&kernel, &opts)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} of {} checks passed (seed {})", reports.len() - failed, reports.len(), opts.seed);
    if failed > 0 {
        return Err(CliError::Verify(failed));
    }
    Ok(())
}
