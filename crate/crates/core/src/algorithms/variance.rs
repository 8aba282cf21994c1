//! Federated population variance.
//!
//! Steps after `Init`:
//!
//! 1. `Sum`: clients send their row count and per-column sums, both masked;
//!    the server publishes `global-mean`.
//! 2. `Sum-square-error`: clients send per-column sums of squared deviations
//!    from `global-mean`, masked; the server divides by the global count and
//!    writes the result file.

use super::api::{AlgorithmError, ClientAlgorithm, ClientContext, ServerAlgorithm, ServerContext};
use crate::masking::RealVector;
use crate::protocol::{DataType, ParameterValue, ProjectStep};

pub const NAME: &str = "variance";
pub const STEP_SUM: &str = "Sum";
pub const STEP_SSE: &str = "Sum-square-error";

pub const LOCAL_COUNT: &str = "local-count";
pub const LOCAL_SUM: &str = "local-sum";
pub const LOCAL_SSE: &str = "local-sse";
pub const GLOBAL_MEAN: &str = "global-mean";

const STATE_COUNT: &str = "global-count";
const STATE_MEAN: &str = "global-mean";
const STATE_VARIANCE: &str = "global-variance";

fn array(values: Vec<f64>) -> ParameterValue {
    ParameterValue::FloatArray(RealVector::from_vec(values).expect("sums of finite data are finite"))
}

pub struct VarianceClient;

impl ClientAlgorithm for VarianceClient {
    fn compute_local_parameters(&self, ctx: &mut ClientContext<'_>) -> Result<(), AlgorithmError> {
        match ctx.step().name() {
            STEP_SUM => {
                let data = ctx.data();
                let count = data.row_count() as i64;
                let sums: Vec<f64> = data.columns().map(|c| c.iter().sum()).collect();
                ctx.set_local(LOCAL_COUNT, ParameterValue::NonNegInt(count));
                ctx.set_local(LOCAL_SUM, array(sums));
                ctx.set_compensator_flag([
                    (LOCAL_COUNT, DataType::NonNegativeInteger),
                    (LOCAL_SUM, DataType::FloatArray),
                ])?;
            }
            STEP_SSE => {
                let mean = ctx
                    .global(GLOBAL_MEAN)?
                    .as_array()
                    .filter(|m| m.len() == ctx.data().column_count())
                    .ok_or_else(|| AlgorithmError::TypeMismatch(GLOBAL_MEAN.into()))?
                    .values()
                    .to_vec();
                let sse: Vec<f64> = ctx
                    .data()
                    .columns()
                    .zip(&mean)
                    .map(|(col, m)| col.iter().map(|x| (x - m) * (x - m)).sum())
                    .collect();
                ctx.set_local(LOCAL_SSE, array(sse));
                ctx.set_compensator_flag([(LOCAL_SSE, DataType::FloatArray)])?;
            }
            _ => {}
        }
        Ok(())
    }
}

pub struct VarianceServer;

impl ServerAlgorithm for VarianceServer {
    fn steps(&self) -> &'static [&'static str] {
        &[STEP_SUM, STEP_SSE]
    }

    fn aggregate(&self, ctx: &mut ServerContext<'_>) -> Result<(), AlgorithmError> {
        match ctx.step().name() {
            ProjectStep::INIT => ctx.set_step(ProjectStep::new(STEP_SUM)),
            STEP_SUM => {
                let count = ctx
                    .compute_aggregated_parameter(LOCAL_COUNT, DataType::NonNegativeInteger)?
                    .as_int()
                    .expect("integer dtype");
                if count == 0 {
                    return Err(AlgorithmError::DivisionByZero);
                }
                let sum = ctx.compute_aggregated_parameter(LOCAL_SUM, DataType::FloatArray)?;
                let mean: Vec<f64> =
                    sum.as_array().expect("array dtype").values().iter().map(|s| s / count as f64).collect();
                ctx.state().insert(STATE_COUNT.into(), ParameterValue::NonNegInt(count));
                ctx.state().insert(STATE_MEAN.into(), array(mean.clone()));
                ctx.set_global(GLOBAL_MEAN, array(mean));
                ctx.set_step(ProjectStep::new(STEP_SSE));
            }
            STEP_SSE => {
                let count = ctx
                    .state()
                    .get(STATE_COUNT)
                    .and_then(ParameterValue::as_int)
                    .ok_or_else(|| AlgorithmError::MissingGlobal(STATE_COUNT.into()))?;
                if count == 0 {
                    return Err(AlgorithmError::DivisionByZero);
                }
                let mean = ctx
                    .state()
                    .get(STATE_MEAN)
                    .and_then(ParameterValue::as_array)
                    .map(|m| m.values().to_vec())
                    .ok_or_else(|| AlgorithmError::MissingGlobal(STATE_MEAN.into()))?;
                let sse = ctx.compute_aggregated_parameter(LOCAL_SSE, DataType::FloatArray)?;
                let variance: Vec<f64> =
                    sse.as_array().expect("array dtype").values().iter().map(|s| s / count as f64).collect();
                let result = VarianceResult { count, mean, variance };
                ctx.state().insert(STATE_VARIANCE.into(), array(result.variance.clone()));
                ctx.set_result(result.to_csv().into_bytes());
                ctx.set_step(ProjectStep::result());
            }
            ProjectStep::RESULT => ctx.set_step(ProjectStep::finished()),
            other => return Err(AlgorithmError::UnknownStep(other.into())),
        }
        Ok(())
    }
}

/// Final output of a variance project.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceResult {
    pub count: i64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl VarianceResult {
    /// `column,mean,variance` rows, one per data column, preceded by a
    /// `# count=N` comment line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# count={}\ncolumn,mean,variance\n", self.count);
        for (i, (m, v)) in self.mean.iter().zip(&self.variance).enumerate() {
            out.push_str(&format!("{i},{m:?},{v:?}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Option<VarianceResult> {
        let mut lines = text.lines();
        let count = lines.next()?.strip_prefix("# count=")?.parse().ok()?;
        if lines.next()? != "column,mean,variance" {
            return None;
        }
        let mut mean = Vec::new();
        let mut variance = Vec::new();
        for line in lines {
            let mut cells = line.split(',');
            cells.next()?;
            mean.push(cells.next()?.parse().ok()?);
            variance.push(cells.next()?.parse().ok()?);
        }
        Some(VarianceResult { count, mean, variance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{RoundBuffer, Submission};
    use crate::dataset::Table;
    use crate::masking::PrimeModulus;
    use crate::protocol::{ParameterMap, SyncState};

    fn client_step(step: &str, data: &Table, globals: &ParameterMap) -> Result<(ParameterMap, crate::protocol::CompensatorFlagMap), AlgorithmError> {
        let step = ProjectStep::new(step);
        let hp = ParameterMap::new();
        let mut ctx = ClientContext::new(&step, globals, &hp, data);
        VarianceClient.compute_local_parameters(&mut ctx)?;
        Ok(ctx.into_parts())
    }

    fn mean_global(m: Vec<f64>) -> ParameterMap {
        ParameterMap::from([(GLOBAL_MEAN.into(), array(m))])
    }

    #[test]
    fn sum_step() {
        let data = Table::from_column(vec![1.0, 2.0]);
        let (locals, flags) = client_step(STEP_SUM, &data, &ParameterMap::new()).unwrap();
        assert_eq!(locals[LOCAL_COUNT], ParameterValue::NonNegInt(2));
        assert_eq!(locals[LOCAL_SUM].as_array().unwrap().values(), &[3.0]);
        assert_eq!(flags[LOCAL_COUNT], DataType::NonNegativeInteger);
        assert_eq!(flags[LOCAL_SUM], DataType::FloatArray);
    }

    #[test]
    fn sse_step() {
        let data = Table::from_column(vec![1.0, 2.0]);
        let (locals, flags) = client_step(STEP_SSE, &data, &mean_global(vec![3.0])).unwrap();
        assert_eq!(locals[LOCAL_SSE].as_array().unwrap().values(), &[5.0]);
        assert_eq!(flags[LOCAL_SSE], DataType::FloatArray);
    }

    #[test]
    fn sse_without_mean() {
        let data = Table::from_column(vec![1.0]);
        assert_eq!(
            client_step(STEP_SSE, &data, &ParameterMap::new()),
            Err(AlgorithmError::MissingGlobal(GLOBAL_MEAN.into()))
        );
    }

    #[test]
    fn empty_shard() {
        let data = Table::from_rows(2, &[]);
        let (locals, _) = client_step(STEP_SUM, &data, &ParameterMap::new()).unwrap();
        assert_eq!(locals[LOCAL_COUNT], ParameterValue::NonNegInt(0));
        assert_eq!(locals[LOCAL_SUM].as_array().unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn reserved_steps_produce_nothing() {
        let data = Table::from_column(vec![1.0]);
        for step in ["Init", "Result", "Finished"] {
            let (locals, flags) = client_step(step, &data, &ParameterMap::new()).unwrap();
            assert!(locals.is_empty() && flags.is_empty());
        }
    }

    /// Unmasked end-to-end run of the server steps over `shards`.
    fn run_server(shards: &[Table]) -> Result<VarianceResult, AlgorithmError> {
        let p = PrimeModulus::default();
        let hp = ParameterMap::new();
        let mut state = ParameterMap::new();
        let mut globals = ParameterMap::new();
        let mut step = ProjectStep::init();
        let mut round = 0;
        let mut result = None;
        while !step.is_finished() {
            let mut buffer = RoundBuffer::new(round);
            for (i, shard) in shards.iter().enumerate() {
                let (locals, _) = client_step(step.name(), shard, &globals)?;
                // Send unflagged: plain sums on the server.
                buffer.submissions.insert(
                    format!("c{i}"),
                    Submission { sync: SyncState { step: step.clone(), round }, parameters: locals, flags: Default::default() },
                );
            }
            let mut ctx = ServerContext::new(&step, &buffer, p, &hp, &mut state);
            VarianceServer.aggregate(&mut ctx)?;
            let (g, next, r) = ctx.finish();
            globals = g;
            result = result.or(r);
            step = next.expect("variance always sets a next step");
            round += 1;
        }
        assert_eq!(round, 4);
        Ok(VarianceResult::from_csv(std::str::from_utf8(&result.unwrap()).unwrap()).unwrap())
    }

    #[test]
    fn one_to_five_partitioned() {
        let shards = [
            Table::from_column(vec![1.0, 2.0]),
            Table::from_column(vec![3.0, 4.0]),
            Table::from_column(vec![5.0]),
        ];
        let r = run_server(&shards).unwrap();
        // Centralized population variance of 1..=5.
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        assert_eq!(r.count, 5);
        assert_eq!(r.mean, vec![mean]);
        assert_eq!(r.variance, vec![var]);
        assert_eq!(var, 2.0);
    }

    #[test]
    fn constant_data_has_zero_variance() {
        let shards = vec![Table::from_column(vec![7.5; 3]); 3];
        let r = run_server(&shards).unwrap();
        assert_eq!(r.variance, vec![0.0]);
        let shards = vec![Table::from_column(vec![0.0; 2]); 3];
        let r = run_server(&shards).unwrap();
        assert_eq!((r.mean.clone(), r.variance.clone()), (vec![0.0], vec![0.0]));
    }

    #[test]
    fn all_empty_shards_divide_by_zero() {
        let shards = vec![Table::from_rows(1, &[]); 3];
        assert_eq!(run_server(&shards), Err(AlgorithmError::DivisionByZero));
    }

    #[test]
    fn result_csv_roundtrip() {
        let r = VarianceResult { count: 5, mean: vec![3.0, -0.5], variance: vec![2.0, 0.1] };
        let csv = r.to_csv();
        assert_eq!(csv, "# count=5\ncolumn,mean,variance\n0,3.0,2.0\n1,-0.5,0.1\n");
        assert_eq!(VarianceResult::from_csv(&csv), Some(r));
    }
}
