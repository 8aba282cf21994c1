use thiserror::Error;

use crate::aggregation::{compute_aggregated_parameter, AggregationError, RoundBuffer};
use crate::dataset::Table;
use crate::masking::PrimeModulus;
use crate::protocol::{CompensatorFlagMap, DataType, ParameterMap, ParameterValue, ProjectStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgorithmError {
    #[error("global parameter {0:?} is missing")]
    MissingGlobal(String),
    #[error("division by zero: aggregated count is 0")]
    DivisionByZero,
    #[error("flagged parameter {0:?} was never set")]
    UnknownParameter(String),
    #[error("parameter {0:?} does not have the flagged data type")]
    TypeMismatch(String),
    #[error("step {0:?} is not part of this algorithm")]
    UnknownStep(String),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// What a client hook sees and produces for one step.
pub struct ClientContext<'a> {
    step: &'a ProjectStep,
    globals: &'a ParameterMap,
    hyperparameters: &'a ParameterMap,
    data: &'a Table,
    local_parameters: ParameterMap,
    flags: CompensatorFlagMap,
}

impl<'a> ClientContext<'a> {
    pub fn new(
        step: &'a ProjectStep,
        globals: &'a ParameterMap,
        hyperparameters: &'a ParameterMap,
        data: &'a Table,
    ) -> Self {
        ClientContext {
            step,
            globals,
            hyperparameters,
            data,
            local_parameters: ParameterMap::new(),
            flags: CompensatorFlagMap::new(),
        }
    }

    pub fn step(&self) -> &ProjectStep {
        self.step
    }

    pub fn global(&self, name: &str) -> Result<&ParameterValue, AlgorithmError> {
        self.globals.get(name).ok_or_else(|| AlgorithmError::MissingGlobal(name.into()))
    }

    pub fn hyperparameters(&self) -> &ParameterMap {
        self.hyperparameters
    }

    pub fn data(&self) -> &Table {
        self.data
    }

    pub fn set_local(&mut self, name: &str, value: ParameterValue) {
        self.local_parameters.insert(name.to_owned(), value);
    }

    /// Marks parameters for masking. Each name must already be set with a
    /// value of the given type.
    pub fn set_compensator_flag<'n>(
        &mut self,
        flags: impl IntoIterator<Item = (&'n str, DataType)>,
    ) -> Result<(), AlgorithmError> {
        let flags: Vec<(&str, DataType)> = flags.into_iter().collect();
        for &(name, dtype) in &flags {
            let value = self
                .local_parameters
                .get(name)
                .ok_or_else(|| AlgorithmError::UnknownParameter(name.into()))?;
            if value.data_type() != dtype {
                return Err(AlgorithmError::TypeMismatch(name.into()));
            }
        }
        self.flags.extend(flags.into_iter().map(|(n, d)| (n.to_owned(), d)));
        Ok(())
    }

    pub fn into_parts(self) -> (ParameterMap, CompensatorFlagMap) {
        (self.local_parameters, self.flags)
    }
}

/// Client half of an algorithm. Reserved steps default to doing nothing;
/// the runtime loads data before `Init` and downloads results at `Result`.
pub trait ClientAlgorithm: Send + Sync {
    fn compute_local_parameters(&self, ctx: &mut ClientContext<'_>) -> Result<(), AlgorithmError>;
}

/// What a server hook sees and produces when a round completes.
pub struct ServerContext<'a> {
    step: &'a ProjectStep,
    buffer: &'a RoundBuffer,
    modulus: PrimeModulus,
    hyperparameters: &'a ParameterMap,
    state: &'a mut ParameterMap,
    global_parameters: ParameterMap,
    next_step: Option<ProjectStep>,
    result: Option<Vec<u8>>,
}

impl<'a> ServerContext<'a> {
    pub fn new(
        step: &'a ProjectStep,
        buffer: &'a RoundBuffer,
        modulus: PrimeModulus,
        hyperparameters: &'a ParameterMap,
        state: &'a mut ParameterMap,
    ) -> Self {
        ServerContext {
            step,
            buffer,
            modulus,
            hyperparameters,
            state,
            global_parameters: ParameterMap::new(),
            next_step: None,
            result: None,
        }
    }

    pub fn step(&self) -> &ProjectStep {
        self.step
    }

    pub fn hyperparameters(&self) -> &ParameterMap {
        self.hyperparameters
    }

    pub fn compute_aggregated_parameter(&self, name: &str, dtype: DataType) -> Result<ParameterValue, AlgorithmError> {
        Ok(compute_aggregated_parameter(name, dtype, self.buffer, self.modulus)?)
    }

    /// Private server state that survives across rounds.
    pub fn state(&mut self) -> &mut ParameterMap {
        self.state
    }

    /// Globals published to clients for the next round.
    pub fn set_global(&mut self, name: &str, value: ParameterValue) {
        self.global_parameters.insert(name.to_owned(), value);
    }

    pub fn set_step(&mut self, step: ProjectStep) {
        self.next_step = Some(step);
    }

    pub fn set_result(&mut self, payload: Vec<u8>) {
        self.result = Some(payload);
    }

    /// `(globals, next step, result payload)`. A `Result` round without an
    /// explicit next step moves to `Finished`.
    pub fn finish(self) -> (ParameterMap, Option<ProjectStep>, Option<Vec<u8>>) {
        let next = self.next_step.or_else(|| self.step.is_result().then(ProjectStep::finished));
        (self.global_parameters, next, self.result)
    }
}

/// Server half of an algorithm.
pub trait ServerAlgorithm: Send + Sync {
    /// Algorithm-defined step names, in order.
    fn steps(&self) -> &'static [&'static str];

    fn aggregate(&self, ctx: &mut ServerContext<'_>) -> Result<(), AlgorithmError>;
}
