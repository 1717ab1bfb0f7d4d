#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "steerlab/errors.hpp"
#include "steerlab/model.hpp"
#include "steerlab/service.hpp"
#include "steerlab/tokenizer.hpp"

namespace py = pybind11;
using namespace steerlab;

namespace {

// Engine calls take and return JSON text; the Python side does the dict conversion.
using Handler = std::function<Json(Engine&, const Json&)>;

std::string call(Engine& e, const Handler& fn, const std::string& body) {
    const Json req = body.empty() ? Json::object() : Json::parse(body);
    Json out;
    {
        py::gil_scoped_release release;
        out = fn(e, req);
    }
    return out.dump();
}

}  // namespace

PYBIND11_MODULE(_steerlab, m) {
    m.doc() = "steerlab engine bindings";
    m.attr("__version__") = engine_version();

    PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
    error_type.call_once_and_store_result([&] { return py::exception<Error>(m, "SteerlabError"); });
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            // "Kind: message", the same kind names the HTTP API reports
            const std::string text = std::string(e.kind()) + ": " + e.what();
            py::set_error(error_type.get_stored(), text.c_str());
        }
    });

    py::class_<Tokenizer, std::shared_ptr<Tokenizer>>(m, "Tokenizer")
        .def_static("load", [](const std::filesystem::path& vocab, const std::filesystem::path& merges) {
            return std::make_shared<Tokenizer>(Tokenizer::load(vocab, merges));
        })
        .def("encode", &Tokenizer::encode)
        .def("decode", [](const Tokenizer& t, const std::vector<TokenId>& ids) {
            const std::string s = t.decode(ids);
            return py::bytes(s).attr("decode")("utf-8", "replace");
        })
        .def("token_id", &Tokenizer::token_id)
        .def_property_readonly("vocab_size", &Tokenizer::vocab_size)
        .def_property_readonly("eos_id", &Tokenizer::eos_id);

    py::class_<Model, std::shared_ptr<Model>>(m, "Model")
        .def_static("load", [](const std::filesystem::path& cfg, const std::filesystem::path& weights) {
            return std::make_shared<Model>(Model::load(cfg, weights));
        })
        .def_property_readonly("config", [](const Model& x) { return x.config().to_json().dump(); })
        .def("forward", [](const Model& x, const std::vector<TokenId>& ids) {
            Tensor logits;
            {
                py::gil_scoped_release release;
                logits = x.forward(ids).logits;
            }
            py::array_t<float> out({logits.rows(), logits.cols()});
            std::copy(logits.flat().begin(), logits.flat().end(), out.mutable_data());
            return out;
        })
        .def("generate", [](const Model& x, const std::vector<TokenId>& ids, int max_new_tokens) {
            GenerationConfig g;
            g.max_new_tokens = max_new_tokens;
            py::gil_scoped_release release;
            return x.generate(ids, g);
        }, py::arg("ids"), py::arg("max_new_tokens") = 16);

    py::class_<Engine>(m, "EngineCore")
        .def(py::init([](const std::string& config_json, const std::filesystem::path& base) {
                 AppConfig cfg = AppConfig::from_json(Json::parse(config_json), base);
                 cfg.apply_env();
                 return std::make_unique<Engine>(cfg);
             }),
             py::arg("config_json"), py::arg("base") = std::filesystem::path())
        .def(py::init([](std::shared_ptr<Model> model, std::shared_ptr<Tokenizer> tok, const std::string& config_json) {
                 return std::make_unique<Engine>(std::move(model), std::move(tok),
                                                 AppConfig::from_json(Json::parse(config_json)));
             }),
             py::arg("model"), py::arg("tokenizer"), py::arg("config_json"))
        .def("generate", [](Engine& e, const std::string& b) { return call(e, [](Engine& x, const Json& r) { return x.generate(r); }, b); })
        .def("steer", [](Engine& e, const std::string& b) { return call(e, [](Engine& x, const Json& r) { return x.steer(r); }, b); })
        .def("trace", [](Engine& e, const std::string& b) { return call(e, [](Engine& x, const Json& r) { return x.trace(r); }, b); })
        .def("extract", [](Engine& e, const std::string& b) { return call(e, [](Engine& x, const Json& r) { return x.extract(r); }, b); })
        .def("sweep", [](Engine& e, const std::string& b) { return call(e, [](Engine& x, const Json& r) { return x.sweep(r); }, b); })
        .def("eval", [](Engine& e, const std::string& b) { return call(e, [](Engine& x, const Json& r) { return x.eval(r); }, b); })
        .def("scenarios", [](Engine& e, const std::string& b) { return call(e, [](Engine& x, const Json& r) { return x.scenarios(r); }, b); })
        .def("vectors", [](Engine& e) { return call(e, [](Engine& x, const Json&) { return x.vectors(); }, ""); })
        .def_property_readonly("model_id", [](const Engine& e) { return e.model().config().model_id; });
}
